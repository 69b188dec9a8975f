import numpy as np
import pytest
from numpy.testing import assert_allclose

from polydg.basis import build_space, eval_basis, eval_batch, eval_grad, evaluate, evaluate_grad, exponents, l2_project
from polydg.errors import AssemblyError
from polydg.mesh import mesh_from_polygons
from polydg.quadrature import cell_rule


@pytest.mark.parametrize("p", [0, 1, 3, 6])
def test_exponents_count(p):
    exps = exponents(p)
    assert len(exps) == (p + 1) * (p + 2) // 2
    assert exps.sum(axis=1).max() == p
    assert len({tuple(e) for e in exps}) == len(exps)


@pytest.mark.parametrize("p", [1, 2, 5, 7, 9])
def test_basis_is_orthonormal_on_every_cell(voronoi32, p):
    space = build_space(voronoi32, p)
    assert space.n_dofs == voronoi32.n_cells * (p + 1) * (p + 2) // 2
    sub = voronoi32.subtessellation
    for c in range(voronoi32.n_cells):
        rule = cell_rule(voronoi32, sub, c, 2 * p)
        phi = eval_basis(space, c, rule.points)
        assert_allclose(phi.T @ (rule.weights[:, None] * phi), np.eye(space.n_local), atol=1e-10)


def test_orthonormal_on_an_elongated_cell():
    sliver = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1e-3], [0.0, 1e-3]])
    mesh = mesh_from_polygons([sliver])
    space = build_space(mesh, 4)
    rule = cell_rule(mesh, mesh.subtessellation, 0, 8)
    phi = eval_basis(space, 0, rule.points)
    assert_allclose(phi.T @ (rule.weights[:, None] * phi), np.eye(15), atol=1e-9)


def test_gradients_match_finite_differences(voronoi32):
    space = build_space(voronoi32, 3)
    c = 4
    x0 = voronoi32.cell_centroid[c][None, :]
    step = 1e-6
    grad = eval_grad(space, c, x0)[0]
    for d in range(2):
        shift = np.zeros((1, 2))
        shift[0, d] = step
        fd = (eval_basis(space, c, x0 + shift) - eval_basis(space, c, x0 - shift))[0] / (2 * step)
        assert_allclose(grad[:, d], fd, rtol=1e-5, atol=1e-5)


def test_batch_evaluation_matches_single_cell(voronoi32):
    space = build_space(voronoi32, 2)
    cells = np.array([0, 7, 19])
    points = voronoi32.cell_centroid[cells][:, None, :] + np.array([[0.0, 0.0], [1e-3, -2e-3]])[None]
    values, grads = eval_batch(space, cells, points, grad=True)
    for k, c in enumerate(cells):
        assert_allclose(values[k], eval_basis(space, c, points[k]))
        assert_allclose(grads[k], eval_grad(space, c, points[k]))
    assert_allclose(eval_batch(space, cells, points), values)


def test_projection_reproduces_polynomials(voronoi32):
    space = build_space(voronoi32, 2)

    def f(x, y):
        return 1.0 + 2.0 * x - y + 3.0 * x * y - x**2

    v = l2_project(space, f)
    c = 11
    pts = voronoi32.cell_points(c) * 0.9 + 0.1 * voronoi32.cell_centroid[c]
    assert_allclose(evaluate(space, v, c, pts), f(pts[:, 0], pts[:, 1]), atol=1e-10)
    expected = np.column_stack([2.0 + 3.0 * pts[:, 1] - 2.0 * pts[:, 0], -1.0 + 3.0 * pts[:, 0]])
    assert_allclose(evaluate_grad(space, v, c, pts), expected, atol=1e-9)


def test_projection_onto_selected_cells(quad4):
    space = build_space(quad4, 1)
    v = l2_project(space, lambda x, y: np.ones_like(x), cells=[3])
    assert np.count_nonzero(np.abs(v) > 1e-14) >= 1
    assert np.all(v[: space.dof_offset(3)] == 0.0)
    assert np.all(v[space.dof_offset(4):] == 0.0)


def test_negative_degree_is_rejected(quad4):
    with pytest.raises(AssemblyError):
        build_space(quad4, -1)
