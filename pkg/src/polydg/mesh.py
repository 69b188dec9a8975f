"""
Mesh Module
===========

This module generates, imports, sub-tessellates, partitions and agglomerates two-dimensional
polygonal meshes, and relates pairs of meshes covering the same domain.

Key Features
------------

- **Generation**:
  - Clipped Voronoi tessellations with optional Lloyd relaxation (convex domains and the L-shape).
  - Uniform quadrilateral grids and the 16 cell L-shape Voronoi coarse grid.
  - Element splitting (``refine``) used to build nested L-shape pairs.

- **Topology**:
  - Faces are raw polygon edges, classified interior/boundary, with unit normals pointing from
    the lower indexed cell (side +) to the higher indexed cell (side -).

- **Agglomeration**:
  - Metis graph partitions of the dual graph (pymetis), recursive coordinate bisection or file
    based partitions, repaired to edge-connected parts.
  - Coarse cells are the boundary loops of their parts; the parent map is recorded.

- **Nesting**:
  - Geometric detection of nested pairs; otherwise all fine/coarse overlap polygons are computed
    by convex clipping.

File formats
------------

Meshes are JSON documents ``{"vertices": [[x, y], ...], "cells": [[i0, i1, ...], ...]}``.
Partitions are text files holding one part index per line, line ``k`` for cell ``k``.

"""
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, cKDTree

try:
    import pymetis
except ImportError:  # pragma: no cover
    pymetis = None

from polydg.errors import MeshError
from polydg.helpers import (
    clip_halfplane,
    is_convex,
    points_in_polygon,
    polygon_area,
    polygon_centroid,
    polygon_diameter,
)

logger = logging.getLogger(__name__)

BOUNDARY = -1
PARTITION_METHODS = ("coordinate_bisection", "metis", "from_file")

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
L_SHAPE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.5], [0.5, 0.5], [0.5, 1.0], [0.0, 1.0]])

DOMAINS = {"unit_square": UNIT_SQUARE, "lshape": L_SHAPE}


@dataclass(frozen=True, eq=False)
class PolytopicMesh:
    """
    A conforming polygonal tessellation.

    Cells are counter-clockwise vertex loops. Agglomerated meshes keep a reference to the mesh they
    were built from (``agglomerate_of``) and the fine cells of each coarse cell (``members``).
    """

    vertices: np.ndarray
    cells: Tuple[np.ndarray, ...]
    agglomerate_of: Optional["PolytopicMesh"] = None
    members: Optional[Tuple[np.ndarray, ...]] = None
    cell_area: np.ndarray = field(init=False, repr=False)
    cell_diameter: np.ndarray = field(init=False, repr=False)
    cell_bbox: np.ndarray = field(init=False, repr=False)
    cell_centroid: np.ndarray = field(init=False, repr=False)
    mesh_size: float = field(init=False)

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        cells = tuple(np.asarray(c, dtype=np.int64) for c in self.cells)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "cells", cells)

        n = len(cells)
        area = np.empty(n)
        diameter = np.empty(n)
        bbox = np.empty((n, 4))
        centroid = np.empty((n, 2))
        for c, loop in enumerate(cells):
            if len(loop) < 3:
                raise MeshError(f"cell {c} has {len(loop)} vertices")
            pts = vertices[loop]
            area[c] = polygon_area(pts)
            diameter[c] = polygon_diameter(pts)
            bbox[c] = (*pts.min(axis=0), *pts.max(axis=0))
            centroid[c] = polygon_centroid(pts)
        object.__setattr__(self, "cell_area", area)
        object.__setattr__(self, "cell_diameter", diameter)
        object.__setattr__(self, "cell_bbox", bbox)
        object.__setattr__(self, "cell_centroid", centroid)
        object.__setattr__(self, "mesh_size", float(diameter.max()) if n else 0.0)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def area(self) -> float:
        """Measure of the covered domain."""
        return float(self.cell_area.sum())

    def cell_points(self, cell: int) -> np.ndarray:
        return self.vertices[self.cells[cell]]

    def validate(self) -> "PolytopicMesh":
        """
        Check that every cell has positive area.

        Returns:
            PolytopicMesh: ``self``, to allow chaining.

        Raises:
            MeshError: If a cell is degenerate or clockwise.
        """
        bad = np.flatnonzero(self.cell_area <= 0.0)
        if len(bad):
            raise MeshError(f"cells {bad[:10].tolist()} have non-positive area")
        return self

    @cached_property
    def subtessellation(self) -> "SubTessellation":
        return subtessellate(self)

    @cached_property
    def faces(self) -> "FaceSet":
        return extract_topology(self)

    def info(self) -> dict:
        """Summary statistics, JSON serialisable."""
        sizes = [len(c) for c in self.cells]
        return {
            "n_cells": self.n_cells,
            "n_vertices": int(self.vertices.shape[0]),
            "area": self.area,
            "mesh_size": self.mesh_size,
            "min_diameter": float(self.cell_diameter.min()) if self.n_cells else 0.0,
            "max_cell_vertices": max(sizes) if sizes else 0,
            "agglomerated": self.agglomerate_of is not None,
        }


@dataclass(frozen=True, eq=False)
class FaceSet:
    """
    Faces of a mesh. ``vertex_ids``/``endpoints`` are oriented as in the side + cell, whose outward
    unit normal is ``normal``. Boundary faces carry ``minus_cell == BOUNDARY``.
    """

    mesh: PolytopicMesh
    vertex_ids: np.ndarray
    endpoints: np.ndarray
    measure: np.ndarray
    normal: np.ndarray
    plus_cell: np.ndarray
    minus_cell: np.ndarray
    plus_local: np.ndarray
    minus_local: np.ndarray

    @property
    def n_faces(self) -> int:
        return len(self.measure)

    @property
    def is_boundary(self) -> np.ndarray:
        return self.minus_cell == BOUNDARY

    @property
    def is_interior(self) -> np.ndarray:
        return self.minus_cell != BOUNDARY


@dataclass(frozen=True, eq=False)
class SubTessellation:
    """Per cell ``(k, 3, 2)`` arrays of counter-clockwise triangles covering the cell."""

    triangles: Tuple[np.ndarray, ...]

    def areas(self, cell: int) -> np.ndarray:
        return _triangle_areas(self.triangles[cell])


@dataclass(frozen=True, eq=False)
class Partition:
    """Assignment of cells to parts, with face based part adjacency."""

    part_of: np.ndarray
    n_parts: int
    part_adjacency: Tuple[frozenset, ...]

    @cached_property
    def members(self) -> Tuple[np.ndarray, ...]:
        order = np.argsort(self.part_of, kind="stable")
        bounds = np.searchsorted(self.part_of[order], np.arange(self.n_parts + 1))
        return tuple(order[bounds[k]:bounds[k + 1]] for k in range(self.n_parts))

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.part_of, minlength=self.n_parts)

    @classmethod
    def from_assignment(cls, part_of: Sequence[int], faces: FaceSet) -> "Partition":
        """
        Build a partition from a cell to part map.

        Args:
            part_of (Sequence[int]): Part index per cell.
            faces (FaceSet): Topology of the partitioned mesh.

        Returns:
            Partition: The validated partition.

        Raises:
            MeshError: If the map length does not match the mesh or a part is empty.
        """
        part_of = np.asarray(part_of, dtype=np.int64)
        n = faces.mesh.n_cells
        if part_of.shape != (n,):
            raise MeshError(f"partition has {part_of.size} entries for a mesh with {n} cells")
        if n and part_of.min() < 0:
            raise MeshError("negative part index in partition")
        n_parts = int(part_of.max()) + 1 if n else 0
        counts = np.bincount(part_of, minlength=n_parts)
        empty = np.flatnonzero(counts == 0)
        if len(empty):
            raise MeshError(f"parts {empty[:10].tolist()} are empty")
        interior = faces.is_interior
        a = part_of[faces.plus_cell[interior]]
        b = part_of[faces.minus_cell[interior]]
        adjacency = [set() for _ in range(n_parts)]
        for pa, pb in zip(a[a != b], b[a != b]):
            adjacency[pa].add(int(pb))
            adjacency[pb].add(int(pa))
        return cls(part_of=part_of, n_parts=n_parts, part_adjacency=tuple(frozenset(s) for s in adjacency))

    @classmethod
    def identity(cls, faces: FaceSet) -> "Partition":
        return cls.from_assignment(np.arange(faces.mesh.n_cells), faces)


@dataclass(frozen=True, eq=False)
class NestingMap:
    """
    Relation between a fine and a coarse mesh over the same domain.

    Nested pairs carry ``parent`` (fine cell to coarse cell); non-nested pairs carry ``overlaps``,
    a tuple of ``(fine cell, coarse cell, intersection polygon)``.
    """

    nested: bool
    parent: Optional[np.ndarray] = None
    overlaps: Tuple[Tuple[int, int, np.ndarray], ...] = ()

    def pairs(self) -> List[Tuple[int, int]]:
        """All ``(fine, coarse)`` cell pairs with a common area."""
        if self.nested:
            return [(int(i), int(j)) for i, j in enumerate(self.parent)]
        return [(i, j) for i, j, _ in self.overlaps]


# ----------------------------------------------------------------------------------------------
# Construction
# ----------------------------------------------------------------------------------------------


def _merge_polygons(polys: Sequence[np.ndarray], tol: float) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Weld independently computed polygon vertices lying within ``tol`` of each other."""
    sizes = [len(p) for p in polys]
    pts = np.vstack(polys)
    n = len(pts)
    pairs = cKDTree(pts).query_pairs(r=tol, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    n_comp, labels = connected_components(graph, directed=False)
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    relabel = np.empty(n_comp, dtype=np.int64)
    relabel[order] = np.arange(n_comp)
    ids = relabel[labels]
    vertices = pts[first[order]]

    cells = []
    start = 0
    for size in sizes:
        loop = ids[start:start + size]
        start += size
        loop = loop[loop != np.roll(loop, 1)] if len(loop) > 1 else loop
        if len(loop) < 3:
            continue
        if polygon_area(vertices[loop]) < 0.0:
            loop = loop[::-1]
        cells.append(loop)
    return vertices, cells


def mesh_from_polygons(polys: Sequence[np.ndarray], tol: Optional[float] = None) -> PolytopicMesh:
    """
    Build a mesh from per-cell polygon coordinates, welding shared vertices.

    Args:
        polys (Sequence[np.ndarray]): One ``(k, 2)`` array per cell.
        tol (float, optional): Welding distance. Defaults to ``1e-9`` times the extent.

    Returns:
        PolytopicMesh: The welded mesh.
    """
    if tol is None:
        pts = np.vstack(polys)
        tol = 1e-9 * float(np.ptp(pts, axis=0).max())
    vertices, cells = _merge_polygons(polys, tol)
    if len(cells) != len(polys):
        raise MeshError(f"{len(polys) - len(cells)} cells collapsed while welding vertices")
    return PolytopicMesh(vertices, tuple(cells)).validate()


def _voronoi_cell(i: int, seeds: np.ndarray, tree: cKDTree, domain: np.ndarray) -> np.ndarray:
    s = seeds[i]
    poly = domain.copy()
    n = len(seeds)
    seen = {i}
    k = min(n, 16)
    while True:
        dist, idx = tree.query(s, k=list(range(1, k + 1)))
        finished = False
        for d, j in zip(dist, idx):
            if j in seen:
                continue
            seen.add(int(j))
            radius = math.sqrt(float(((poly - s) ** 2).sum(axis=1).max())) if len(poly) else 0.0
            # bisector of (s, seeds[j]) is at distance d/2 and cannot cut the current cell
            if d > 2.0 * radius:
                finished = True
                break
            normal = seeds[j] - s
            poly = clip_halfplane(poly, normal, float(normal @ (0.5 * (seeds[j] + s))))
        if finished or k >= n:
            break
        k = min(n, 2 * k)
    return poly


def _clean_loop(pts: np.ndarray) -> np.ndarray:
    """Drop repeated vertices, straight-through vertices and zero-width spikes of a loop."""
    scale = float(np.ptp(pts, axis=0).max()) if len(pts) else 0.0
    tol = 1e-12 * scale
    pts = [p for p in pts]
    changed = True
    while changed and len(pts) >= 3:
        changed = False
        k = len(pts)
        for i in range(k):
            a, b, c = pts[i - 1], pts[i], pts[(i + 1) % k]
            e1, e2 = b - a, c - b
            cross = e1[0] * e2[1] - e1[1] * e2[0]
            if np.all(np.abs(e1) <= tol) or abs(cross) <= tol * scale:
                del pts[i]
                changed = True
                break
    return np.asarray(pts).reshape(-1, 2)


def _convex_pieces(domain: np.ndarray):
    """
    Split a domain at its reflex vertex along the extension of the incoming edge.

    Returns:
        Tuple: The convex pieces and the cut ``(normal, offset)``, or ``([domain], None)``.

    Raises:
        MeshError: If the domain has more than one reflex vertex.
    """
    if is_convex(domain):
        return [domain], None
    d = np.roll(domain, -1, axis=0) - domain
    turn = d[:, 0] * np.roll(d[:, 1], -1) - d[:, 1] * np.roll(d[:, 0], -1)
    reflex = np.flatnonzero(turn < 0.0)
    if len(reflex) != 1:
        raise MeshError(f"domains with {len(reflex)} reflex vertices are not supported")
    r = (int(reflex[0]) + 1) % len(domain)
    t = domain[r] - domain[r - 1]
    normal = np.array([t[1], -t[0]])
    offset = float(normal @ domain[r])
    pieces = [_clean_loop(clip_halfplane(domain, normal, offset)), _clean_loop(clip_halfplane(domain, -normal, -offset))]
    for piece in pieces:
        if not is_convex(piece):
            raise MeshError("domain does not split into convex pieces at its reflex vertex")
    return pieces, (normal, offset)


def _cut_run(poly: np.ndarray, normal: np.ndarray, offset: float, tol: float) -> Optional[Tuple[int, int]]:
    on = np.abs(poly @ normal - offset) <= tol * float(np.linalg.norm(normal))
    if on.sum() < 2 or on.all():
        return None
    k = len(poly)
    start = next(i for i in range(k) if on[i] and not on[i - 1])
    end = start
    while on[(end + 1) % k]:
        end = (end + 1) % k
    return start, end


def _splice(a: np.ndarray, b: np.ndarray, cut, tol: float) -> np.ndarray:
    """Union of two convex polygons lying on either side of the cut line and touching along it."""
    normal, offset = cut
    runs = [_cut_run(a, normal, offset, tol), _cut_run(b, normal, offset, tol)]
    if runs[0] is None or runs[1] is None:
        raise MeshError("cannot merge Voronoi cell pieces across the domain cut")
    loop = []
    for poly, (start, end) in zip((a, b), runs):
        k = len(poly)
        i = end
        loop.append(poly[i])
        while i != start:
            i = (i + 1) % k
            loop.append(poly[i])
    return _clean_loop(np.asarray(loop))


def _voronoi_polygons(seeds: np.ndarray, domain: np.ndarray) -> List[np.ndarray]:
    tree = cKDTree(seeds)
    pieces, cut = _convex_pieces(domain)
    scale = float(np.ptp(domain, axis=0).max())
    min_area = 1e-12 * polygon_area(domain)
    polys = []
    for i in range(len(seeds)):
        parts = [_voronoi_cell(i, seeds, tree, piece) for piece in pieces]
        parts = [_clean_loop(p) for p in parts if len(p) >= 3]
        parts = [p for p in parts if len(p) >= 3 and polygon_area(p) > min_area]
        if not parts:
            raise MeshError(f"Voronoi cell of seed {i} is empty")
        poly = parts[0] if len(parts) == 1 else _splice(parts[0], parts[1], cut, 1e-10 * scale)
        polys.append(poly)
    return polys


def generate_voronoi(seeds: np.ndarray, domain: np.ndarray = UNIT_SQUARE, lloyd_iters: int = 0) -> PolytopicMesh:
    """
    Clipped Voronoi tessellation of ``domain`` by per-seed half-plane clipping.

    Args:
        seeds (np.ndarray): ``(n, 2)`` pairwise distinct seeds inside the domain.
        domain (np.ndarray): Counter-clockwise domain polygon (convex or the L-shape).
        lloyd_iters (int): Number of centroidal relaxations.

    Returns:
        PolytopicMesh: The mesh; cell ``k`` belongs to seed ``k``.

    Raises:
        MeshError: Duplicate seeds, seeds outside the domain, or an area defect.
    """
    seeds = np.asarray(seeds, dtype=float).reshape(-1, 2)
    domain = np.asarray(domain, dtype=float)
    if len(seeds) == 0:
        raise MeshError("no seeds given")
    scale = float(np.ptp(domain, axis=0).max())
    outside = np.flatnonzero(~points_in_polygon(domain, seeds, slack=1e-14 * scale))
    if len(outside):
        raise MeshError(f"seeds {outside[:10].tolist()} lie outside the domain")
    duplicates = cKDTree(seeds).query_pairs(r=1e-14 * scale)
    if duplicates:
        raise MeshError(f"duplicate seeds {sorted(duplicates)[:5]}")

    for it in range(lloyd_iters):
        polys = _voronoi_polygons(seeds, domain)
        centroids = np.array([polygon_centroid(p) for p in polys])
        inside = points_in_polygon(domain, centroids)
        seeds = np.where(inside[:, None], centroids, seeds)
        logger.debug("Lloyd iteration %d: max shift %.3e", it, float(np.abs(centroids - seeds).max()))

    polys = _voronoi_polygons(seeds, domain)
    mesh = mesh_from_polygons(polys, tol=1e-9 * scale)
    domain_area = polygon_area(domain)
    if abs(mesh.area - domain_area) > 1e-10 * domain_area:
        raise MeshError(f"Voronoi cells cover {mesh.area!r}, domain area is {domain_area!r}")
    logger.info("Voronoi mesh: %d cells, h=%.4g", mesh.n_cells, mesh.mesh_size)
    return mesh


def random_seeds(n: int, domain: np.ndarray, seed: int) -> np.ndarray:
    """
    Uniform random seeds inside ``domain`` by rejection sampling in its bounding box.

    Args:
        n (int): Number of seeds.
        domain (np.ndarray): Domain polygon.
        seed (int): Random generator seed.

    Returns:
        np.ndarray: ``(n, 2)`` seeds.
    """
    rng = np.random.default_rng(seed)
    lo, hi = domain.min(axis=0), domain.max(axis=0)
    out = np.empty((0, 2))
    while len(out) < n:
        cand = lo + (hi - lo) * rng.random((2 * (n - len(out)) + 8, 2))
        cand = cand[points_in_polygon(domain, cand)]
        out = np.vstack([out, cand])
    return out[:n]


def random_voronoi(n: int, domain: np.ndarray = UNIT_SQUARE, seed: int = 0, lloyd_iters: int = 10) -> PolytopicMesh:
    """Voronoi mesh of ``n`` random seeds, relaxed ``lloyd_iters`` times."""
    return generate_voronoi(random_seeds(n, domain, seed), domain, lloyd_iters)


def generate_structured(kind: str, n_or_seed: int, lloyd_iters: int = 30) -> PolytopicMesh:
    """
    Structured mesh families.

    Args:
        kind (str): ``"quad"`` for the uniform ``n x n`` grid on the unit square, or
            ``"lshape_voronoi16"`` for the 16 cell Voronoi grid of the L-shape.
        n_or_seed (int): Grid resolution (quad) or random seed (L-shape).
        lloyd_iters (int): Relaxations of the L-shape grid.

    Returns:
        PolytopicMesh: The mesh.
    """
    if kind == "quad":
        n = int(n_or_seed)
        if n < 1:
            raise MeshError(f"quad grid needs n >= 1, got {n}")
        t = np.linspace(0.0, 1.0, n + 1)
        xx, yy = np.meshgrid(t, t)
        vertices = np.column_stack([xx.ravel(), yy.ravel()])

        def vid(i, j):
            return j * (n + 1) + i

        cells = tuple(
            np.array([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)])
            for j in range(n)
            for i in range(n)
        )
        return PolytopicMesh(vertices, cells)
    if kind == "lshape_voronoi16":
        return random_voronoi(16, L_SHAPE, seed=int(n_or_seed), lloyd_iters=lloyd_iters)
    raise MeshError(f"unknown structured mesh kind {kind!r}")


def _star_center(pts: np.ndarray, cell: int) -> np.ndarray:
    """Centroid of a convex cell, else the centroid of its kernel."""
    if is_convex(pts):
        return polygon_centroid(pts)
    kernel = pts
    k = len(pts)
    for i in range(k):
        a, b = pts[i], pts[(i + 1) % k]
        normal = np.array([b[1] - a[1], a[0] - b[0]])
        kernel = clip_halfplane(kernel, normal, float(normal @ a))
    if len(kernel) < 3 or polygon_area(kernel) <= 1e-12 * polygon_area(pts):
        raise MeshError(f"cell {cell} is not star-shaped and cannot be split")
    return polygon_centroid(kernel)


def refine(mesh: PolytopicMesh, levels: int = 1) -> Tuple[PolytopicMesh, NestingMap]:
    """
    Split every k-gon into k quadrilaterals (centroid, edge midpoint, vertex, next edge midpoint).

    Shared edges are split at the same midpoint on both sides, so the result is conforming.

    Args:
        mesh (PolytopicMesh): Mesh with star-shaped cells.
        levels (int): Number of successive splits.

    Returns:
        Tuple[PolytopicMesh, NestingMap]: The fine mesh and its parent map into ``mesh``.
    """
    parent = np.arange(mesh.n_cells)
    current = mesh
    for _ in range(levels):
        polys, owner = [], []
        for c in range(current.n_cells):
            pts = current.cell_points(c)
            centre = _star_center(pts, c)
            mids = 0.5 * (pts + np.roll(pts, -1, axis=0))
            k = len(pts)
            for i in range(k):
                polys.append(np.array([centre, mids[i - 1], pts[i], mids[i]]))
                owner.append(c)
        current = mesh_from_polygons(polys)
        parent = parent[np.asarray(owner)]
    logger.info("refined %d cells into %d", mesh.n_cells, current.n_cells)
    return current, NestingMap(nested=True, parent=parent)


# ----------------------------------------------------------------------------------------------
# Topology and sub-tessellation
# ----------------------------------------------------------------------------------------------


def extract_topology(mesh: PolytopicMesh) -> FaceSet:
    """
    Classify every cell edge as interior or boundary face.

    Args:
        mesh (PolytopicMesh): A valid mesh.

    Returns:
        FaceSet: Faces ordered by (side + cell, local edge index).

    Raises:
        MeshError: On an edge with more than two incident cells or inconsistent orientation.
    """
    edge_map = {}
    for c, loop in enumerate(mesh.cells):
        k = len(loop)
        for l in range(k):
            a, b = int(loop[l]), int(loop[(l + 1) % k])
            key = (a, b) if a < b else (b, a)
            edge_map.setdefault(key, []).append((c, l, a, b))

    nf = len(edge_map)
    vertex_ids = np.empty((nf, 2), dtype=np.int64)
    plus_cell = np.empty(nf, dtype=np.int64)
    minus_cell = np.full(nf, BOUNDARY, dtype=np.int64)
    plus_local = np.empty(nf, dtype=np.int64)
    minus_local = np.full(nf, -1, dtype=np.int64)
    for f, (key, entries) in enumerate(edge_map.items()):
        if len(entries) > 2:
            raise MeshError(f"non-manifold edge {key}: {len(entries)} incident cells")
        c, l, a, b = entries[0]
        vertex_ids[f] = (a, b)
        plus_cell[f] = c
        plus_local[f] = l
        if len(entries) == 2:
            c2, l2, a2, b2 = entries[1]
            if c2 == c:
                raise MeshError(f"cell {c} uses edge {key} twice")
            if (a2, b2) != (b, a):
                raise MeshError(f"cells {c} and {c2} traverse edge {key} in the same direction")
            minus_cell[f] = c2
            minus_local[f] = l2

    endpoints = mesh.vertices[vertex_ids]
    tangent = endpoints[:, 1] - endpoints[:, 0]
    measure = np.hypot(tangent[:, 0], tangent[:, 1])
    if np.any(measure <= 0.0):
        raise MeshError("zero length face")
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / measure[:, None]
    return FaceSet(
        mesh=mesh,
        vertex_ids=vertex_ids,
        endpoints=endpoints,
        measure=measure,
        normal=normal,
        plus_cell=plus_cell,
        minus_cell=minus_cell,
        plus_local=plus_local,
        minus_local=minus_local,
    )


def _triangle_areas(tris: np.ndarray) -> np.ndarray:
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _centroid_fan(pts: np.ndarray, area: float) -> Optional[np.ndarray]:
    centre = polygon_centroid(pts)
    tris = np.stack([np.broadcast_to(centre, pts.shape), pts, np.roll(pts, -1, axis=0)], axis=1)
    if np.all(_triangle_areas(tris) > 1e-14 * area):
        return tris
    return None


def _ear_clip(pts: np.ndarray, area: float) -> Optional[np.ndarray]:
    idx = list(range(len(pts)))
    eps = 1e-14 * area
    tris = []
    while len(idx) > 3:
        m = len(idx)
        for t in range(m):
            i0, i1, i2 = idx[t - 1], idx[t], idx[(t + 1) % m]
            a, b, c = pts[i0], pts[i1], pts[i2]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if abs(cross) <= eps:
                del idx[t]
                break
            if cross < 0.0:
                continue
            others = np.array([pts[j] for j in idx if j not in (i0, i1, i2)])
            if len(others):
                # exclude points welded onto the ear's own corners (pinch vertices)
                coincide = np.zeros(len(others), dtype=bool)
                for corner in (a, b, c):
                    coincide |= np.all(np.abs(others - corner) <= 1e-14, axis=1)
                others = others[~coincide]
            if len(others):
                d1 = (b[0] - a[0]) * (others[:, 1] - a[1]) - (b[1] - a[1]) * (others[:, 0] - a[0])
                d2 = (c[0] - b[0]) * (others[:, 1] - b[1]) - (c[1] - b[1]) * (others[:, 0] - b[0])
                d3 = (a[0] - c[0]) * (others[:, 1] - c[1]) - (a[1] - c[1]) * (others[:, 0] - c[0])
                if np.any((d1 >= -eps) & (d2 >= -eps) & (d3 >= -eps)):
                    continue
            tris.append((a, b, c))
            del idx[t]
            break
        else:
            return None
    if len(idx) == 3:
        a, b, c = (pts[j] for j in idx)
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if cross > eps:
            tris.append((a, b, c))
        elif cross < -eps:
            return None
    if not tris:
        return None
    return np.array(tris, dtype=float)


def subtessellate(mesh: PolytopicMesh) -> SubTessellation:
    """
    Triangulate every cell.

    The centroid fan is used for cells star-shaped with respect to their centroid. Other cells use
    the triangles of their fine members (agglomerated meshes) or ear clipping.

    Args:
        mesh (PolytopicMesh): The mesh.

    Returns:
        SubTessellation: Triangles covering each cell exactly.

    Raises:
        MeshError: If a cell cannot be split into positive triangles.
    """
    tris = []
    for c in range(mesh.n_cells):
        pts = mesh.cell_points(c)
        area = mesh.cell_area[c]
        fan = _centroid_fan(pts, area)
        if fan is None and mesh.agglomerate_of is not None:
            fine = mesh.agglomerate_of.subtessellation
            fan = np.concatenate([fine.triangles[k] for k in mesh.members[c]])
        if fan is None:
            fan = _ear_clip(pts, area)
        if fan is None:
            raise MeshError(f"cell {c} yields a degenerate sub-tessellation")
        total = _triangle_areas(fan).sum()
        if abs(total - area) > 1e-10 * area:
            raise MeshError(f"sub-tessellation of cell {c} covers {total!r} instead of {area!r}")
        tris.append(fan)
    return SubTessellation(tuple(tris))


def triangulate_convex(poly: np.ndarray) -> np.ndarray:
    """Centroid fan of a convex polygon, dropping zero-area slivers."""
    area = polygon_area(poly)
    centre = polygon_centroid(poly)
    tris = np.stack([np.broadcast_to(centre, poly.shape), poly, np.roll(poly, -1, axis=0)], axis=1)
    return tris[_triangle_areas(tris) > 1e-14 * area]


# ----------------------------------------------------------------------------------------------
# Partitioning and agglomeration
# ----------------------------------------------------------------------------------------------


def _bisect(cells: np.ndarray, centroids: np.ndarray, n_parts: int, offset: int, out: np.ndarray):
    if n_parts == 1:
        out[cells] = offset
        return
    pts = centroids[cells]
    axis = int(np.argmax(np.ptp(pts, axis=0)))
    order = np.lexsort((pts[:, 1 - axis], pts[:, axis]))
    left = n_parts // 2
    split = int(round(len(cells) * left / n_parts))
    _bisect(cells[order[:split]], centroids, left, offset, out)
    _bisect(cells[order[split:]], centroids, n_parts - left, offset + left, out)


def _metis(faces: FaceSet, n_parts: int) -> np.ndarray:
    """Metis partition of the face-neighbour (dual) graph of the cells."""
    n = faces.mesh.n_cells
    interior = faces.is_interior
    a, b = faces.plus_cell[interior], faces.minus_cell[interior]
    graph = coo_matrix((np.ones(2 * len(a)), (np.r_[a, b], np.r_[b, a])), shape=(n, n)).tocsr()
    graph.sum_duplicates()
    _, membership = pymetis.part_graph(n_parts, xadj=graph.indptr.tolist(), adjncy=graph.indices.tolist())
    return np.asarray(membership, dtype=np.int64)


def _canonical_labels(part_of: np.ndarray) -> np.ndarray:
    """Renumber parts in order of their lowest cell index."""
    _, first = np.unique(part_of, return_index=True)
    labels = np.unique(part_of)
    relabel = np.empty(labels.max() + 1, dtype=np.int64)
    relabel[labels[np.argsort(first)]] = np.arange(len(labels))
    return relabel[part_of]


def _repair_connectivity(part_of: np.ndarray, faces: FaceSet, max_passes: int = 20) -> np.ndarray:
    """Move every fragment that is not the largest piece of its part to the best adjacent part."""
    part_of = part_of.copy()
    n = len(part_of)
    interior = faces.is_interior
    plus, minus = faces.plus_cell[interior], faces.minus_cell[interior]
    for _ in range(max_passes):
        same = part_of[plus] == part_of[minus]
        graph = coo_matrix((np.ones(int(same.sum())), (plus[same], minus[same])), shape=(n, n))
        _, comp = connected_components(graph, directed=False)
        comp_size = np.bincount(comp)
        main = {}
        for c in range(n):
            p, cc = part_of[c], comp[c]
            if p not in main or comp_size[cc] > comp_size[main[p]]:
                main[p] = cc
        fragments = sorted({comp[c] for c in range(n) if comp[c] != main[part_of[c]]})
        if not fragments:
            return part_of
        for frag in fragments:
            cells = np.flatnonzero(comp == frag)
            own = part_of[cells[0]]
            votes = Counter()
            in_frag = np.isin(plus, cells) | np.isin(minus, cells)
            for a, b in zip(plus[in_frag], minus[in_frag]):
                for other in (part_of[a], part_of[b]):
                    if other != own:
                        votes[int(other)] += 1
            if votes:
                target = min(votes, key=lambda k: (-votes[k], k))
                part_of[cells] = target
        logger.debug("reassigned %d disconnected fragments", len(fragments))
    raise MeshError("partition connectivity repair did not converge")


def read_partition_file(path: str, n_cells: int) -> np.ndarray:
    """
    Read a partition file: one part index per line, line ``k`` for cell ``k``.

    Raises:
        MeshError: If the file does not match the mesh.
    """
    with open(path) as fh:
        lines = [line.strip() for line in fh if line.strip()]
    try:
        part_of = np.array([int(line) for line in lines], dtype=np.int64)
    except ValueError as err:
        raise MeshError(f"partition file {path} holds a non-integer entry") from err
    if len(part_of) != n_cells:
        raise MeshError(f"partition file {path} has {len(part_of)} entries, mesh has {n_cells} cells")
    return part_of


def write_partition(partition: Partition, path: str):
    with open(path, "w") as fh:
        fh.writelines(f"{int(p)}\n" for p in partition.part_of)


def agglomerate(
    mesh: PolytopicMesh,
    n_parts: int,
    method: str = "coordinate_bisection",
    path: Optional[str] = None,
) -> Partition:
    """
    Partition the cells of a mesh into connected parts.

    Coordinate bisection splits the cell centroids recursively along the longer extent. Metis
    partitions the face-neighbour graph through pymetis and falls back to bisection when pymetis
    is not installed. Disconnected fragments are moved to an adjacent part afterwards. Parts whose
    sizes differ by more than a factor 2 are reported as a warning, not an error.

    Args:
        mesh (PolytopicMesh): The mesh to partition.
        n_parts (int): Number of parts, ``1 <= n_parts <= n_cells``.
        method (str): ``"coordinate_bisection"``, ``"metis"`` or ``"from_file"``.
        path (str, optional): Partition file for ``"from_file"``.

    Returns:
        Partition: Parts numbered by their lowest cell index.

    Raises:
        MeshError: If ``n_parts`` is out of range or the file does not fit the mesh.
    """
    n = mesh.n_cells
    faces = mesh.faces
    if method not in PARTITION_METHODS:
        raise MeshError(f"unknown partitioning method {method!r}")
    if method == "from_file":
        if path is None:
            raise MeshError("from_file partitioning needs a path")
        part_of = read_partition_file(path, n)
        n_parts = int(part_of.max()) + 1
        if len(np.unique(part_of)) != n_parts or part_of.min() < 0:
            raise MeshError(f"partition file {path} leaves parts empty")
    else:
        if not 1 <= n_parts <= n:
            raise MeshError(f"n_parts={n_parts} outside [1, {n}]")
        if method == "metis" and pymetis is None:
            logger.warning("pymetis is not installed; using coordinate bisection")
            method = "coordinate_bisection"
        if n_parts == n:
            part_of = np.arange(n)
        elif n_parts == 1:
            part_of = np.zeros(n, dtype=np.int64)
        elif method == "metis":
            part_of = _metis(faces, n_parts)
        else:
            part_of = np.empty(n, dtype=np.int64)
            _bisect(np.arange(n), mesh.cell_centroid, n_parts, 0, part_of)

    part_of = _canonical_labels(_repair_connectivity(part_of, faces))
    partition = Partition.from_assignment(part_of, faces)
    if partition.n_parts != n_parts:
        logger.warning("%s partition has %d parts instead of %d", method, partition.n_parts, n_parts)
    sizes = partition.sizes
    if sizes.max() > 2 * sizes.min():
        logger.warning("unbalanced partition: part sizes %d..%d", sizes.min(), sizes.max())
    logger.info("partitioned %d cells into %d parts (%s)", n, partition.n_parts, method)
    return partition


def _part_boundary_loop(mesh: PolytopicMesh, cells: np.ndarray, part: int) -> np.ndarray:
    directed = []
    count = Counter()
    for c in cells:
        loop = mesh.cells[c]
        k = len(loop)
        for l in range(k):
            a, b = int(loop[l]), int(loop[(l + 1) % k])
            directed.append((a, b))
            count[(min(a, b), max(a, b))] += 1
    boundary = [(a, b) for a, b in directed if count[(min(a, b), max(a, b))] == 1]
    if not boundary:
        raise MeshError(f"part {part} has no boundary")
    outgoing = defaultdict(list)
    for e, (a, b) in enumerate(boundary):
        outgoing[a].append(e)

    P = mesh.vertices
    used = np.zeros(len(boundary), dtype=bool)
    used[0] = True
    start = boundary[0][0]
    loop = [start]
    current = 0
    while True:
        a, b = boundary[current]
        candidates = [e for e in outgoing[b] if not used[e]]
        if not candidates:
            if b != start:
                raise MeshError(f"boundary of part {part} is open at vertex {b}")
            break
        if len(candidates) > 1:
            # pinch vertex: the rightmost turn keeps walking one loop through both lobes
            d_in = P[b] - P[a]

            def turn(e):
                d_out = P[boundary[e][1]] - P[b]
                return math.atan2(d_in[0] * d_out[1] - d_in[1] * d_out[0], float(d_in @ d_out))

            candidates.sort(key=turn)
        current = candidates[0]
        used[current] = True
        loop.append(b)
    if not used.all():
        raise MeshError(f"part {part} is not simply connected ({int((~used).sum())} boundary edges left)")
    return np.array(loop, dtype=np.int64)


def coarsen(mesh: PolytopicMesh, partition: Partition) -> Tuple[PolytopicMesh, NestingMap]:
    """
    Agglomerate the parts of a partition into coarse cells.

    Args:
        mesh (PolytopicMesh): Fine mesh.
        partition (Partition): Connected parts of ``mesh``.

    Returns:
        Tuple[PolytopicMesh, NestingMap]: Coarse mesh (sharing the fine vertex array) and the
        nested map whose parent is ``partition.part_of``.

    Raises:
        MeshError: If a part is not simply connected or areas do not add up.
    """
    loops = tuple(_part_boundary_loop(mesh, cells, k) for k, cells in enumerate(partition.members))
    coarse = PolytopicMesh(mesh.vertices, loops, agglomerate_of=mesh, members=partition.members)
    child_area = np.bincount(partition.part_of, weights=mesh.cell_area, minlength=partition.n_parts)
    bad = np.flatnonzero(np.abs(coarse.cell_area - child_area) > 1e-10 * child_area)
    if len(bad):
        raise MeshError(f"coarse cells {bad[:10].tolist()} do not match the area of their members")
    logger.info("coarsened %d cells into %d, H=%.4g", mesh.n_cells, coarse.n_cells, coarse.mesh_size)
    return coarse, NestingMap(nested=True, parent=partition.part_of.copy())


def coloring_bound(partition: Partition, faces: FaceSet) -> int:
    """
    Maximum number of parts whose closure touches a given part (vertex contact counts).

    Args:
        partition (Partition): Partition of ``faces.mesh``.
        faces (FaceSet): Topology of the mesh.

    Returns:
        int: N_S.
    """
    if partition.n_parts <= 1:
        return 0
    rows, cols = [], []
    for side in (faces.plus_cell, faces.minus_cell):
        valid = side != BOUNDARY
        for end in (0, 1):
            rows.append(faces.vertex_ids[valid, end])
            cols.append(partition.part_of[side[valid]])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    nv = faces.mesh.vertices.shape[0]
    incidence = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(nv, partition.n_parts)).tocsr()
    incidence.data[:] = 1.0
    touch = (incidence.T @ incidence).tocsr()
    touch.setdiag(0)
    touch.eliminate_zeros()
    return int(np.diff(touch.indptr).max())


def partition_diameter(mesh: PolytopicMesh, partition: Partition) -> float:
    """Largest subdomain diameter of a partition."""
    if partition.n_parts == mesh.n_cells:
        return mesh.mesh_size
    best = 0.0
    for cells in partition.members:
        pts = mesh.vertices[np.unique(np.concatenate([mesh.cells[c] for c in cells]))]
        if len(pts) > 64:
            pts = pts[ConvexHull(pts).vertices]
        best = max(best, polygon_diameter(pts))
    return best


# ----------------------------------------------------------------------------------------------
# Mesh pairs
# ----------------------------------------------------------------------------------------------


def convex_intersection(poly_a: np.ndarray, poly_b: np.ndarray) -> Optional[np.ndarray]:
    """
    Intersection of two convex counter-clockwise polygons (Sutherland-Hodgman).

    Args:
        poly_a (np.ndarray): First polygon.
        poly_b (np.ndarray): Second polygon, used as the clip window.

    Returns:
        Optional[np.ndarray]: The intersection polygon, or None when its area is below
        ``1e-12 * min(area(a), area(b))``.

    Raises:
        MeshError: If an input is not convex.
    """
    poly_a = np.asarray(poly_a, dtype=float)
    poly_b = np.asarray(poly_b, dtype=float)
    for name, poly in (("first", poly_a), ("second", poly_b)):
        if not is_convex(poly):
            raise MeshError(f"{name} polygon of the intersection is not convex")
    out = poly_a
    nb = len(poly_b)
    for i in range(nb):
        p, q = poly_b[i], poly_b[(i + 1) % nb]
        normal = np.array([q[1] - p[1], p[0] - q[0]])
        out = clip_halfplane(out, normal, float(normal @ p))
        if len(out) < 3:
            return None
    area = polygon_area(out)
    if area <= 1e-12 * min(polygon_area(poly_a), polygon_area(poly_b)):
        return None
    scale = 1e-14 * float(np.ptp(out, axis=0).max())
    keep = np.any(np.abs(out - np.roll(out, 1, axis=0)) > scale, axis=1)
    return out[keep]


def _bbox_overlap(a: np.ndarray, b: np.ndarray, slack: float) -> np.ndarray:
    return (
        (a[:, 0][:, None] <= b[:, 2][None] + slack)
        & (b[:, 0][None] <= a[:, 2][:, None] + slack)
        & (a[:, 1][:, None] <= b[:, 3][None] + slack)
        & (b[:, 1][None] <= a[:, 3][:, None] + slack)
    )


def _detect_parents(fine: PolytopicMesh, coarse: PolytopicMesh, slack: float) -> Optional[np.ndarray]:
    cen = fine.cell_centroid
    bb = coarse.cell_bbox
    candidates = (
        (bb[:, 0][None] - slack <= cen[:, 0][:, None])
        & (cen[:, 0][:, None] <= bb[:, 2][None] + slack)
        & (bb[:, 1][None] - slack <= cen[:, 1][:, None])
        & (cen[:, 1][:, None] <= bb[:, 3][None] + slack)
    )
    parent = np.empty(fine.n_cells, dtype=np.int64)
    for i in range(fine.n_cells):
        pts = np.vstack([cen[i], fine.cell_points(i)])
        for j in np.flatnonzero(candidates[i]):
            if points_in_polygon(coarse.cell_points(j), pts, slack).all():
                parent[i] = j
                break
        else:
            return None
    return parent


def nesting_map(fine: PolytopicMesh, coarse: PolytopicMesh, force_overlaps: bool = False) -> NestingMap:
    """
    Relate a fine and a coarse mesh covering the same domain.

    Args:
        fine (PolytopicMesh): Fine mesh.
        coarse (PolytopicMesh): Coarse mesh.
        force_overlaps (bool): Skip nestedness detection and compute overlap polygons.

    Returns:
        NestingMap: Nested when every fine cell lies in one coarse cell, else the overlaps.

    Raises:
        MeshError: If overlaps miss part of a fine cell or a coarse cell is not convex.
    """
    scale = float(np.ptp(fine.vertices, axis=0).max())
    slack = 1e-10 * scale
    if not force_overlaps:
        parent = _detect_parents(fine, coarse, slack)
        if parent is not None:
            sums = np.bincount(parent, weights=fine.cell_area, minlength=coarse.n_cells)
            if np.all(np.abs(sums - coarse.cell_area) <= 1e-10 * coarse.cell_area):
                logger.info("meshes are nested (%d -> %d cells)", fine.n_cells, coarse.n_cells)
                return NestingMap(nested=True, parent=parent)
            logger.debug("containment holds but coarse areas differ; using overlaps")

    convex = np.array([is_convex(coarse.cell_points(j)) for j in range(coarse.n_cells)])
    candidates = _bbox_overlap(fine.cell_bbox, coarse.cell_bbox, slack)
    overlaps = []
    for i in range(fine.n_cells):
        fine_pts = fine.cell_points(i)
        covered = 0.0
        for j in np.flatnonzero(candidates[i]):
            if not convex[j]:
                raise MeshError(f"coarse cell {j} is not convex; non-nested transfer needs convex coarse cells")
            poly = convex_intersection(fine_pts, coarse.cell_points(j))
            if poly is not None:
                overlaps.append((i, int(j), poly))
                covered += polygon_area(poly)
        if abs(covered - fine.cell_area[i]) > 1e-8 * fine.cell_area[i]:
            raise MeshError(f"overlaps cover {covered!r} of fine cell {i} with area {fine.cell_area[i]!r}")
    logger.info("meshes are non-nested: %d overlap polygons", len(overlaps))
    return NestingMap(nested=False, overlaps=tuple(overlaps))


def compose(first: NestingMap, second: NestingMap) -> NestingMap:
    """Parent map of fine -> coarse -> coarser for nested maps."""
    if not (first.nested and second.nested):
        raise MeshError("only nested maps can be composed")
    return NestingMap(nested=True, parent=second.parent[first.parent])


# ----------------------------------------------------------------------------------------------
# I/O
# ----------------------------------------------------------------------------------------------


def read_mesh(path: str) -> PolytopicMesh:
    """
    Load a JSON mesh ``{"vertices": [[x, y], ...], "cells": [[i0, ...], ...]}``.

    Raises:
        MeshError: On a malformed document or invalid cells.
    """
    with open(path) as fh:
        try:
            data = json.load(fh)
            vertices = np.asarray(data["vertices"], dtype=float)
            cells = tuple(np.asarray(c, dtype=np.int64) for c in data["cells"])
        except (KeyError, TypeError, ValueError) as err:
            raise MeshError(f"malformed mesh file {path}: {err}") from err
    nv = len(vertices)
    for c, loop in enumerate(cells):
        if loop.min() < 0 or loop.max() >= nv:
            raise MeshError(f"cell {c} references a missing vertex")
    return PolytopicMesh(vertices, cells).validate()


def write_mesh(mesh: PolytopicMesh, path: str):
    """Write a mesh as JSON, dropping unreferenced vertices."""
    used = np.unique(np.concatenate(mesh.cells))
    remap = np.full(mesh.vertices.shape[0], -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    data = {
        "vertices": mesh.vertices[used].tolist(),
        "cells": [remap[c].tolist() for c in mesh.cells],
    }
    with open(path, "w") as fh:
        json.dump(data, fh)
