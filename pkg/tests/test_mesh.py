import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from polydg.errors import MeshError
from polydg.helpers import is_convex, polygon_area
from polydg.mesh import (
    BOUNDARY,
    L_SHAPE,
    UNIT_SQUARE,
    Partition,
    PolytopicMesh,
    agglomerate,
    coarsen,
    coloring_bound,
    compose,
    convex_intersection,
    generate_structured,
    generate_voronoi,
    mesh_from_polygons,
    nesting_map,
    partition_diameter,
    random_voronoi,
    read_mesh,
    refine,
    write_mesh,
    write_partition,
)


def test_quad_grid_topology(quad4):
    assert quad4.n_cells == 16
    assert quad4.area == pytest.approx(1.0)
    assert quad4.mesh_size == pytest.approx(np.sqrt(2.0) / 4)
    faces = quad4.faces
    assert faces.n_faces == 40
    assert int(faces.is_boundary.sum()) == 16
    assert_allclose(faces.measure, 0.25)
    assert_allclose(np.linalg.norm(faces.normal, axis=1), 1.0)


def test_interior_normals_point_from_plus_to_minus(voronoi32):
    faces = voronoi32.faces
    inner = faces.is_interior
    assert np.all(faces.plus_cell[inner] < faces.minus_cell[inner])
    step = voronoi32.cell_centroid[faces.minus_cell[inner]] - voronoi32.cell_centroid[faces.plus_cell[inner]]
    assert np.all(np.einsum("kd,kd->k", step, faces.normal[inner]) > 0.0)


def test_boundary_normals_point_outwards(quad4):
    faces = quad4.faces
    bnd = faces.is_boundary
    midpoints = faces.endpoints[bnd].mean(axis=1)
    outward = midpoints + 1e-3 * faces.normal[bnd]
    assert np.all((outward < 0.0) | (outward > 1.0))
    assert np.all(faces.minus_cell[bnd] == BOUNDARY)


def test_voronoi_is_deterministic_and_covers_the_square(voronoi32):
    assert voronoi32.n_cells == 32
    assert voronoi32.area == pytest.approx(1.0, rel=1e-12)
    assert all(is_convex(voronoi32.cell_points(c)) for c in range(voronoi32.n_cells))
    again = random_voronoi(32, seed=7)
    assert_array_equal(again.vertices, voronoi32.vertices)


def test_voronoi_on_the_lshape():
    mesh = random_voronoi(40, L_SHAPE, seed=3)
    assert mesh.area == pytest.approx(0.75, rel=1e-12)
    faces = mesh.faces
    # every boundary face lies on the domain boundary
    mid = faces.endpoints[faces.is_boundary].mean(axis=1)
    on_boundary = (
        np.isclose(mid[:, 0], 0.0) | np.isclose(mid[:, 1], 0.0)
        | (np.isclose(mid[:, 0], 1.0) & (mid[:, 1] <= 0.5 + 1e-12))
        | (np.isclose(mid[:, 1], 1.0) & (mid[:, 0] <= 0.5 + 1e-12))
        | (np.isclose(mid[:, 0], 0.5) & (mid[:, 1] >= 0.5 - 1e-12))
        | (np.isclose(mid[:, 1], 0.5) & (mid[:, 0] >= 0.5 - 1e-12))
    )
    assert on_boundary.all()


def test_voronoi_rejects_bad_seeds():
    with pytest.raises(MeshError):
        generate_voronoi(np.array([[0.2, 0.2], [0.2, 0.2], [0.7, 0.7]]))
    with pytest.raises(MeshError):
        generate_voronoi(np.array([[0.2, 0.2], [1.5, 0.5]]))
    with pytest.raises(MeshError):
        generate_voronoi(np.array([[0.2, 0.2], [0.75, 0.75]]), L_SHAPE)


def test_subtessellation_covers_every_cell(voronoi32):
    sub = voronoi32.subtessellation
    for c in range(voronoi32.n_cells):
        areas = sub.areas(c)
        assert np.all(areas > 0.0)
        assert areas.sum() == pytest.approx(voronoi32.cell_area[c], rel=1e-12)


def test_subtessellation_of_a_cell_not_star_shaped_from_its_centroid():
    u_shape = np.array([[0, 0], [3, 0], [3, 2], [2, 2], [2, 1], [1, 1], [1, 2], [0, 2]], dtype=float)
    mesh = mesh_from_polygons([u_shape])
    areas = mesh.subtessellation.areas(0)
    assert np.all(areas > 0.0)
    assert areas.sum() == pytest.approx(5.0)


def test_non_manifold_and_misoriented_edges_are_rejected():
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0], [0.5, 2.0]])
    three = PolytopicMesh(vertices, ([0, 1, 2], [1, 0, 3], [0, 1, 4]))
    with pytest.raises(MeshError, match="non-manifold"):
        three.faces
    same_direction = PolytopicMesh(vertices, ([0, 1, 2], [0, 1, 4]))
    with pytest.raises(MeshError, match="same direction"):
        same_direction.faces


def test_degenerate_cells_are_rejected():
    with pytest.raises(MeshError):
        PolytopicMesh(np.zeros((2, 2)), ([0, 1],))
    clockwise = PolytopicMesh(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]), ([0, 1, 2],))
    with pytest.raises(MeshError):
        clockwise.validate()


def test_agglomerate_gives_connected_canonical_parts(voronoi32):
    partition = agglomerate(voronoi32, 5)
    assert partition.n_parts == 5
    assert partition.part_of[0] == 0
    assert partition.sizes.sum() == 32
    faces = voronoi32.faces
    inner = faces.is_interior
    for k, cells in enumerate(partition.members):
        assert np.all(partition.part_of[cells] == k)
        keep = np.isin(faces.plus_cell[inner], cells) & np.isin(faces.minus_cell[inner], cells)
        graph = coo_matrix((np.ones(int(keep.sum())), (faces.plus_cell[inner][keep], faces.minus_cell[inner][keep])), shape=(32, 32))
        _, comp = connected_components(graph, directed=False)
        assert len(set(comp[cells])) == 1


def test_agglomerate_rejects_bad_part_counts(voronoi32):
    with pytest.raises(MeshError):
        agglomerate(voronoi32, 0)
    with pytest.raises(MeshError):
        agglomerate(voronoi32, 33)
    with pytest.raises(MeshError):
        agglomerate(voronoi32, 4, method="spectral")


def test_partition_file_round_trip(voronoi32, tmp_path):
    partition = agglomerate(voronoi32, 4)
    path = tmp_path / "parts.txt"
    write_partition(partition, str(path))
    again = agglomerate(voronoi32, 4, method="from_file", path=str(path))
    assert_array_equal(again.part_of, partition.part_of)
    (tmp_path / "short.txt").write_text("0\n1\n")
    with pytest.raises(MeshError):
        agglomerate(voronoi32, 2, method="from_file", path=str(tmp_path / "short.txt"))


def _parts_are_connected(mesh, partition):
    faces = mesh.faces
    inner = faces.is_interior
    plus, minus = faces.plus_cell[inner], faces.minus_cell[inner]
    same = partition.part_of[plus] == partition.part_of[minus]
    graph = coo_matrix((np.ones(int(same.sum())), (plus[same], minus[same])), shape=(mesh.n_cells, mesh.n_cells))
    n_comp, _ = connected_components(graph, directed=False)
    return n_comp == partition.n_parts


def test_metis_partition_is_connected_and_balanced():
    pytest.importorskip("pymetis")
    grid = generate_structured("quad", 8)
    partition = agglomerate(grid, 4, method="metis")
    assert partition.n_parts == 4
    assert partition.sizes.max() <= 2 * partition.sizes.min()
    assert _parts_are_connected(grid, partition)


def test_metis_falls_back_to_bisection(monkeypatch, caplog, voronoi32):
    monkeypatch.setattr("polydg.mesh.pymetis", None)
    with caplog.at_level("WARNING", logger="polydg.mesh"):
        partition = agglomerate(voronoi32, 4, method="metis")
    assert "pymetis is not installed" in caplog.text
    assert_array_equal(partition.part_of, agglomerate(voronoi32, 4).part_of)


def test_unbalanced_partition_is_a_warning(quad4, tmp_path, caplog):
    path = tmp_path / "parts.txt"
    path.write_text("0\n" + "1\n" * 15)
    with caplog.at_level("WARNING", logger="polydg.mesh"):
        partition = agglomerate(quad4, 2, method="from_file", path=str(path))
    assert "unbalanced" in caplog.text
    assert partition.sizes.tolist() == [1, 15]
    assert _parts_are_connected(quad4, partition)


def test_coarsen_builds_nested_agglomerates(agglomerated_pair):
    fine, coarse, nesting = agglomerated_pair
    assert coarse.n_cells == 4
    assert nesting.nested
    assert coarse.area == pytest.approx(fine.area, rel=1e-12)
    sums = np.bincount(nesting.parent, weights=fine.cell_area, minlength=4)
    assert_allclose(sums, coarse.cell_area, rtol=1e-12)
    for c in range(coarse.n_cells):
        assert coarse.subtessellation.areas(c).sum() == pytest.approx(coarse.cell_area[c], rel=1e-10)
    coarse.faces


def test_quad_blocks_agglomerate_into_squares(quad4):
    partition = agglomerate(quad4, 4)
    coarse, _ = coarsen(quad4, partition)
    assert_allclose(coarse.cell_area, 0.25)
    assert coloring_bound(partition, quad4.faces) == 3
    assert partition_diameter(quad4, partition) == pytest.approx(np.sqrt(2.0) / 2)


def test_coloring_bound_counts_vertex_neighbours(quad4):
    identity = Partition.identity(quad4.faces)
    assert coloring_bound(identity, quad4.faces) == 8
    assert partition_diameter(quad4, identity) == quad4.mesh_size


def test_refine_splits_cells_into_quadrilaterals():
    square = generate_structured("quad", 1)
    fine, nesting = refine(square, 1)
    assert fine.n_cells == 4
    assert_allclose(fine.cell_area, 0.25)
    assert_array_equal(nesting.parent, 0)

    coarse = generate_structured("quad", 2)
    fine, nesting = refine(coarse, 2)
    assert fine.n_cells == 4 * 16
    assert_array_equal(np.bincount(nesting.parent), 16)
    assert nesting_map(fine, coarse).nested


def test_refine_lshape_coarse_grid():
    coarse = generate_structured("lshape_voronoi16", 42)
    assert coarse.n_cells == 16
    fine, nesting = refine(coarse, 2)
    assert fine.area == pytest.approx(0.75, rel=1e-12)
    sums = np.bincount(nesting.parent, weights=fine.cell_area, minlength=16)
    assert_allclose(sums, coarse.cell_area, rtol=1e-10)
    fine.faces
    fine.subtessellation


def test_convex_intersection():
    a = np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]])
    b = a + 1.0
    overlap = convex_intersection(a, b)
    assert polygon_area(overlap) == pytest.approx(1.0)
    assert convex_intersection(a, a + 3.0) is None
    with pytest.raises(MeshError):
        convex_intersection(L_SHAPE, a)


def test_nesting_map_detects_nested_and_non_nested(agglomerated_pair, nonnested_pair):
    fine, coarse, nesting = agglomerated_pair
    detected = nesting_map(fine, generate_structured("quad", 1))
    assert detected.nested
    assert_array_equal(detected.parent, 0)

    fine, coarse = nonnested_pair
    mapping = nesting_map(fine, coarse)
    assert not mapping.nested
    covered = np.zeros(fine.n_cells)
    for i, _, poly in mapping.overlaps:
        covered[i] += polygon_area(poly)
    assert_allclose(covered, fine.cell_area, rtol=1e-8)


def test_compose_nested_maps(voronoi32):
    mid, first = coarsen(voronoi32, agglomerate(voronoi32, 8))
    top, second = coarsen(mid, agglomerate(mid, 2))
    total = compose(first, second)
    assert_array_equal(total.parent, second.parent[first.parent])
    sums = np.bincount(total.parent, weights=voronoi32.cell_area, minlength=2)
    assert_allclose(sums, top.cell_area, rtol=1e-10)


def test_mesh_json_round_trip(voronoi32, tmp_path):
    path = tmp_path / "mesh.json"
    write_mesh(voronoi32, str(path))
    again = read_mesh(str(path))
    assert again.n_cells == voronoi32.n_cells
    assert_allclose(again.cell_area, voronoi32.cell_area)
    (tmp_path / "bad.json").write_text('{"vertices": [[0, 0], [1, 0]], "cells": [[0, 1, 7]]}')
    with pytest.raises(MeshError):
        read_mesh(str(tmp_path / "bad.json"))


def test_voronoi_of_one_and_four_seeds():
    single = generate_voronoi(np.array([[0.3, 0.6]]))
    assert single.n_cells == 1
    assert single.area == pytest.approx(1.0)
    four = generate_voronoi(np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]]))
    assert_allclose(four.cell_area, 0.25)
    assert_allclose(four.cell_diameter, np.sqrt(2.0) / 2)


def test_structured_grid_sizes():
    grid = generate_structured("quad", 16)
    assert grid.n_cells == 256
    assert grid.mesh_size == pytest.approx(np.sqrt(2.0) / 16)
    with pytest.raises(MeshError):
        generate_structured("hexagons", 3)


def test_topology_of_one_and_two_squares():
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    one = mesh_from_polygons([square])
    assert one.faces.n_faces == 4
    assert one.faces.measure.sum() == pytest.approx(4.0)
    two = mesh_from_polygons([square, square + [1.0, 0.0]])
    inner = two.faces.is_interior
    assert int(inner.sum()) == 1
    assert two.faces.measure[inner] == pytest.approx([1.0])


def test_face_measures_add_up(voronoi32):
    faces = voronoi32.faces
    edges = sum(np.linalg.norm(np.roll(voronoi32.cell_points(c), -1, axis=0) - voronoi32.cell_points(c), axis=1).sum() for c in range(voronoi32.n_cells))
    total = 2.0 * faces.measure[faces.is_interior].sum() + faces.measure[faces.is_boundary].sum()
    assert total == pytest.approx(edges, rel=1e-10)
    assert faces.measure[faces.is_boundary].sum() == pytest.approx(4.0, rel=1e-10)


def test_centroid_fans_of_regular_cells():
    square = mesh_from_polygons([UNIT_SQUARE])
    assert_allclose(square.subtessellation.areas(0), 0.25)
    angles = np.linspace(0.0, 2.0 * np.pi, 7)[:-1]
    hexagon = mesh_from_polygons([np.column_stack([np.cos(angles), np.sin(angles)])])
    areas = hexagon.subtessellation.areas(0)
    assert len(areas) == 6
    assert_allclose(areas, hexagon.cell_area[0] / 6, rtol=1e-12)


def test_extreme_part_counts():
    grid = generate_structured("quad", 16)
    assert_array_equal(agglomerate(grid, grid.n_cells).part_of, np.arange(256))
    assert agglomerate(grid, 1).n_parts == 1
    assert_array_equal(agglomerate(grid, 16).sizes, 16)


def test_coarsen_small_grids():
    grid = generate_structured("quad", 2)
    single, _ = coarsen(grid, agglomerate(grid, 1))
    assert single.n_cells == 1
    assert single.area == pytest.approx(1.0)
    assert single.mesh_size == pytest.approx(np.sqrt(2.0))

    same, nesting = coarsen(grid, Partition.identity(grid.faces))
    assert_allclose(same.cell_area, grid.cell_area)
    assert_allclose(same.cell_diameter, grid.cell_diameter)
    assert_array_equal(nesting.parent, np.arange(4))
    assert coloring_bound(agglomerate(grid, 1), grid.faces) == 0
    assert coloring_bound(agglomerate(grid, 2), grid.faces) == 1


def test_intersection_examples():
    assert polygon_area(convex_intersection(UNIT_SQUARE, UNIT_SQUARE)) == pytest.approx(1.0)
    shifted = UNIT_SQUARE + 0.5
    assert polygon_area(convex_intersection(UNIT_SQUARE, shifted)) == pytest.approx(0.25)
    tri = np.array([[0.2, -0.5], [1.5, 0.3], [0.1, 0.9]])
    assert polygon_area(convex_intersection(tri, UNIT_SQUARE)) == pytest.approx(polygon_area(convex_intersection(UNIT_SQUARE, tri)), rel=1e-12)


def test_nesting_map_of_related_meshes(quad4):
    same = nesting_map(quad4, quad4)
    assert same.nested
    assert_array_equal(same.parent, np.arange(16))

    partition = agglomerate(quad4, 4)
    coarse, _ = coarsen(quad4, partition)
    assert_array_equal(nesting_map(quad4, coarse).parent, partition.part_of)

    halves = generate_voronoi(np.array([[0.3, 0.4], [0.7, 0.55]]))
    crossing = nesting_map(quad4, halves)
    assert not crossing.nested
    covered = np.zeros(16)
    for i, _, poly in crossing.overlaps:
        covered[i] += polygon_area(poly)
    assert_allclose(covered, 1.0 / 16, rtol=1e-8)
