import json

import numpy as np
import pytest
import scipy.sparse as sp
from numpy.testing import assert_allclose

from polydg.assembly import DiffusionField, assemble_sipdg
from polydg.basis import build_space
from polydg.errors import SchwarzError
from polydg.mesh import NestingMap, Partition, agglomerate, coarsen, nesting_map, random_voronoi
from solvers.krylov import dense_condition, operator_to_dense, pcg
from solvers.schwarz import (
    BoundInputs,
    CoarseSolver,
    build_local_solvers,
    build_prolongation,
    build_schwarz,
    theoretical_bound,
)


@pytest.fixture(scope="module")
def nested_problem(agglomerated_pair):
    fine, coarse, nesting = agglomerated_pair
    space = build_space(fine, 2)
    A = assemble_sipdg(space, DiffusionField.uniform(fine.n_cells))
    return space, A, build_space(coarse, 1), nesting


def test_preconditioner_matches_its_definition(nested_problem):
    space, A, coarse_space, nesting = nested_problem
    partition = Partition.identity(space.mesh.faces)
    M = build_schwarz(A, space, partition, coarse_space, nesting)
    dense = operator_to_dense(M, space.n_dofs)

    Ad = A.toarray()
    Q = M.Q.toarray()
    expected = Q @ np.linalg.solve(Q.T @ Ad @ Q, Q.T)
    for c in range(space.mesh.n_cells):
        idx = space.dofs(c)
        expected[np.ix_(idx, idx)] += np.linalg.inv(Ad[np.ix_(idx, idx)])
    assert_allclose(dense, expected, atol=1e-9 * np.abs(expected).max())
    assert_allclose(dense, dense.T, atol=1e-10 * np.abs(dense).max())


def test_preconditioner_reduces_condition_number(nested_problem):
    space, A, coarse_space, nesting = nested_problem
    M = build_schwarz(A, space, Partition.identity(space.mesh.faces), coarse_space, nesting)
    Minv = operator_to_dense(M, space.n_dofs)
    assert dense_condition(A.toarray(), Minv, inverse=True) < dense_condition(A.toarray())

    b = np.random.default_rng(3).standard_normal(space.n_dofs)
    preconditioned = pcg(A.matvec, M, b, tol=1e-8)
    plain = pcg(A.matvec, None, b, tol=1e-8)
    assert preconditioned.converged
    assert preconditioned.iterations < plain.iterations


def test_larger_subdomains_and_variants(nested_problem):
    space, A, coarse_space, nesting = nested_problem
    partition = agglomerate(space.mesh, 8)
    full = build_schwarz(A, space, partition, coarse_space, nesting)
    local = build_schwarz(A, space, partition, use_coarse=False)
    coarse = build_schwarz(A, space, partition, coarse_space, nesting, use_local=False)
    r = np.random.default_rng(5).standard_normal(space.n_dofs)
    assert_allclose(full(r), local(r) + coarse(r))
    assert local.Q is None and coarse.local is None
    summary = json.loads(full.to_json())
    assert summary["n_subdomains"] == 8
    assert summary["coarse_dofs"] == coarse_space.n_dofs
    assert summary["coarse_dense"] is True


def test_factored_and_inverted_blocks_agree(nested_problem):
    space, A, _, _ = nested_problem
    partition = agglomerate(space.mesh, 4)
    r = np.random.default_rng(9).standard_normal(space.n_dofs)
    inverted = build_local_solvers(A, partition, space)
    factored = build_local_solvers(A, partition, space, inverse_limit=0)
    assert not inverted.factored and not factored.groups
    assert_allclose(inverted.solve(r), factored.solve(r), rtol=1e-8)
    assert inverted.block_sizes.sum() == space.n_dofs


def test_sparse_coarse_solver_agrees_with_dense(nested_problem):
    space, A, coarse_space, nesting = nested_problem
    Q = build_prolongation(space, coarse_space, nesting)
    A0 = (Q.T @ A.matrix @ Q).tocsr()
    A0 = (0.5 * (A0 + A0.T)).tocsr()
    b = np.arange(A0.shape[0], dtype=float)
    dense, sparse = CoarseSolver(A0), CoarseSolver(A0, dense_limit=0)
    assert dense.dense and not sparse.dense
    assert_allclose(sparse.solve(b), dense.solve(b), rtol=1e-8)


def test_non_nested_coarse_space(nonnested_pair):
    fine, coarse = nonnested_pair
    space = build_space(fine, 1)
    A = assemble_sipdg(space, DiffusionField.uniform(fine.n_cells))
    mapping = nesting_map(fine, coarse)
    M = build_schwarz(A, space, Partition.identity(fine.faces), build_space(coarse, 1), mapping)
    dense = operator_to_dense(M, space.n_dofs)
    assert_allclose(dense, dense.T, atol=1e-10 * np.abs(dense).max())
    assert np.linalg.eigvalsh(0.5 * (dense + dense.T)).min() > 0.0


def test_rank_deficient_prolongation(nonnested_pair):
    fine, coarse = nonnested_pair
    mapping = nesting_map(fine, coarse)
    partial = NestingMap(nested=False, overlaps=tuple(o for o in mapping.overlaps if o[1] != 0))
    with pytest.raises(SchwarzError, match="rank deficient"):
        build_prolongation(build_space(fine, 1), build_space(coarse, 1), partial)


def test_setup_errors(nested_problem):
    space, A, coarse_space, nesting = nested_problem
    partition = Partition.identity(space.mesh.faces)
    with pytest.raises(SchwarzError):
        build_schwarz(A, space, partition, use_coarse=False, use_local=False)
    with pytest.raises(SchwarzError):
        build_schwarz(A, space, partition, coarse_space=None, nesting=nesting)
    with pytest.raises(SchwarzError, match="not positive definite"):
        build_local_solvers(-sp.identity(space.n_dofs, format="csr"), partition, space)
    with pytest.raises(SchwarzError, match="indefinite coarse"):
        CoarseSolver(-sp.identity(4, format="csr"))
    M = build_schwarz(A, space, partition, use_coarse=False)
    with pytest.raises(SchwarzError):
        M(np.ones(3))


def test_theoretical_bound():
    nested = BoundInputs(p=2, q=1, h=0.1, H=0.5, H_sub=0.1, N_S=3)
    assert theoretical_bound(nested) == pytest.approx((4 * 0.5 / 0.1 + 4 * 0.25 / 0.01) * 4)
    non_nested = BoundInputs(p=2, q=1, h=0.1, H=0.5, H_sub=0.1, N_S=3, nested=False)
    assert theoretical_bound(non_nested) == pytest.approx(16 * 0.25 / 0.01 * 4)
    with pytest.raises(SchwarzError):
        BoundInputs(p=1, q=2, h=0.1, H=0.5, H_sub=0.1, N_S=3)


def _quad_problem(quad4):
    space = build_space(quad4, 1)
    A = assemble_sipdg(space, DiffusionField.uniform(quad4.n_cells))
    return space, A


def test_single_subdomain_is_an_exact_solver(quad4, rng):
    space, A = _quad_problem(quad4)
    M = build_schwarz(A, space, agglomerate(quad4, 1), use_coarse=False)
    report = pcg(A, M, rng.standard_normal(space.n_dofs), tol=1e-8)
    assert report.iterations == 1
    assert report.cond_estimate == pytest.approx(1.0, abs=1e-8)
    assert dense_condition(A, operator_to_dense(M, space.n_dofs), inverse=True) == pytest.approx(1.0, abs=1e-8)


def test_coarse_space_equal_to_the_fine_space_is_exact(quad4, rng):
    space, A = _quad_problem(quad4)
    M = build_schwarz(
        A, space, Partition.identity(quad4.faces), build_space(quad4, 1), nesting_map(quad4, quad4), use_local=False
    )
    assert_allclose(M.Q.toarray(), np.eye(space.n_dofs), atol=1e-10)
    report = pcg(A, M, rng.standard_normal(space.n_dofs), tol=1e-8)
    assert report.iterations == 1


@pytest.mark.parametrize("seed", [1, 2, 3])
@pytest.mark.parametrize("nested", [True, False], ids=["nested", "non-nested"])
def test_preconditioner_is_symmetric_positive_definite(seed, nested):
    fine = random_voronoi(24, seed=seed)
    if nested:
        coarse, nesting = coarsen(fine, agglomerate(fine, 3))
    else:
        coarse = random_voronoi(5, seed=seed + 100)
        nesting = nesting_map(fine, coarse)
    space = build_space(fine, 2)
    A = assemble_sipdg(space, DiffusionField.uniform(fine.n_cells))
    M = build_schwarz(A, space, Partition.identity(fine.faces), build_space(coarse, 1), nesting)
    dense = operator_to_dense(M, space.n_dofs)
    assert np.abs(dense - dense.T).max() <= 1e-10 * np.abs(dense).max()
    assert np.linalg.eigvalsh(0.5 * (dense + dense.T)).min() > 0.0
