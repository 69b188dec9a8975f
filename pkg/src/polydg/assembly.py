"""
Assembly Module
===============

Assembly of the symmetric interior penalty DG operator and the related matrices on a ``DGSpace``.

Key Features
------------

- **assemble_sipdg**: volume term plus one loop over faces. On each face the jump ``J`` and the
  weighted normal flux ``D`` of the local basis give the face matrix
  ``-(D^T W J + J^T W D) + sigma J^T W J``. Homogeneous Dirichlet data enter through the boundary
  faces (one-sided averages).
- **assemble_rhs**, **assemble_mass**, **assemble_mixed_mass** (nested and non-nested pairs).
- **assemble_lifting** / **lifting_form**: the lifted form of the operator, used to cross-check the
  face form.
- **energy_norm** and **l2_error**.

Quadrature degrees: volume ``2p``, faces ``2p+1``, loads ``2p+2``, fine/coarse products ``p+q``.

"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.io import mmwrite

from polydg.basis import DGSpace, eval_basis, eval_batch, eval_grad
from polydg.errors import AssemblyError
from polydg.mesh import BOUNDARY, FaceSet, NestingMap, triangulate_convex
from polydg.quadrature import cell_rule, faces_rule, triangles_rule

logger = logging.getLogger(__name__)

DEFAULT_C_SIGMA = 10.0


@dataclass(frozen=True)
class DiffusionField:
    """Piecewise constant diffusion coefficient, one value per fine cell."""

    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        if np.any(~np.isfinite(rho)) or np.any(rho <= 0.0):
            raise AssemblyError("diffusion coefficient must be positive and finite")
        if np.any(rho < 1.0):
            logger.warning("diffusion coefficient below 1 (min %.3g); values are usually scaled to >= 1", rho.min())
        object.__setattr__(self, "rho", rho)

    @classmethod
    def uniform(cls, n_cells: int, value: float = 1.0) -> "DiffusionField":
        return cls(np.full(n_cells, float(value)))

    @classmethod
    def coarse_checkerboard(cls, parent: np.ndarray, rho_e: float) -> "DiffusionField":
        """``rho_e`` on fine cells whose coarse cell has an even 1-based index, 1 elsewhere."""
        return cls(np.where((np.asarray(parent) + 1) % 2 == 0, float(rho_e), 1.0))

    @classmethod
    def fine_checkerboard(cls, n_cells: int, rho_e: float) -> "DiffusionField":
        """``rho_e`` on fine cells with an even 1-based index, 1 elsewhere."""
        return cls(np.where((np.arange(n_cells) + 1) % 2 == 0, float(rho_e), 1.0))

    def coarse_ratio(self, nesting: NestingMap, n_coarse: int) -> float:
        """
        Largest ratio of max to min fine coefficient over the fine cells meeting one coarse cell.
        """
        hi = np.zeros(n_coarse)
        lo = np.full(n_coarse, np.inf)
        pairs = np.array(nesting.pairs(), dtype=np.int64).reshape(-1, 2)
        np.maximum.at(hi, pairs[:, 1], self.rho[pairs[:, 0]])
        np.minimum.at(lo, pairs[:, 1], self.rho[pairs[:, 0]])
        return float(np.max(hi / lo))


class SparseSymMatrix:
    """
    Assembled symmetric operator in CSR layout with the per-cell block map of its space.
    """

    def __init__(self, matrix: sp.spmatrix, block_size: int):
        self.matrix = sp.csr_matrix(matrix)
        self.block_size = block_size

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, x):
        return self.matrix @ x

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def block(self, cell: int) -> np.ndarray:
        s = slice(cell * self.block_size, (cell + 1) * self.block_size)
        return self.matrix[s, s].toarray()

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def symmetry_error(self) -> float:
        """``max|A - A^T| / max|A|``."""
        scale = abs(self.matrix).max()
        if scale == 0:
            return 0.0
        return float(abs(self.matrix - self.matrix.T).max() / scale)

    def export(self, path: str):
        """Write the matrix in MatrixMarket coordinate format."""
        mmwrite(path, self.matrix, symmetry="general")
        logger.info("wrote %dx%d matrix to %s", self.n, self.n, path)


@dataclass(frozen=True)
class PenaltyData:
    """Per face penalty ``sigma``, weight ``omega`` and the harmonic averages it is built from."""

    sigma: np.ndarray
    omega: np.ndarray
    rho_avg: np.ndarray
    h_avg: np.ndarray


def harmonic_avg(a: float, b: Optional[float] = None) -> float:
    """
    Harmonic average across a face.

    Args:
        a (float): Value on side +.
        b (float, optional): Value on side -; None on boundary faces.

    Returns:
        float: ``2ab / (a + b)``, or ``a`` on the boundary.

    Raises:
        AssemblyError: On nonpositive input.
    """
    if a <= 0 or (b is not None and b <= 0):
        raise AssemblyError(f"harmonic average needs positive values, got {a}, {b}")
    if b is None:
        return float(a)
    return 2.0 * a * b / (a + b)


def _face_harmonic(values: np.ndarray, faces: FaceSet) -> np.ndarray:
    a = values[faces.plus_cell]
    interior = faces.is_interior
    b = np.where(interior, values[np.where(interior, faces.minus_cell, faces.plus_cell)], a)
    return np.where(interior, 2.0 * a * b / (a + b), a)


def penalty_values(faces: FaceSet, rho: Union[DiffusionField, np.ndarray], p: int, C_sigma: float = DEFAULT_C_SIGMA) -> PenaltyData:
    """
    Penalty ``sigma = C_sigma <rho> p^2 / <h>`` and weight ``omega = rho^- / (rho^+ + rho^-)``.

    Args:
        faces (FaceSet): Topology of the fine mesh.
        rho (DiffusionField or np.ndarray): Coefficient per cell.
        p (int): Polynomial degree.
        C_sigma (float): Penalty constant.

    Returns:
        PenaltyData: Per face data; ``omega = 1`` on boundary faces.
    """
    if C_sigma <= 0:
        raise AssemblyError(f"C_sigma must be positive, got {C_sigma}")
    rho = rho.rho if isinstance(rho, DiffusionField) else np.asarray(rho, dtype=float)
    rho_avg = _face_harmonic(rho, faces)
    h_avg = _face_harmonic(faces.mesh.cell_diameter, faces)
    interior = faces.is_interior
    rho_plus = rho[faces.plus_cell]
    rho_minus = np.where(interior, rho[np.where(interior, faces.minus_cell, faces.plus_cell)], 0.0)
    omega = np.where(interior, rho_minus / (rho_plus + rho_minus), 1.0)
    sigma = C_sigma * rho_avg * p**2 / h_avg
    return PenaltyData(sigma=sigma, omega=omega, rho_avg=rho_avg, h_avg=h_avg)


def _coo_blocks(dofs: np.ndarray, blocks: np.ndarray):
    """Row/col/data triplets for ``(k, b, b)`` blocks placed at ``(k, b)`` dof lists."""
    rows = np.broadcast_to(dofs[:, :, None], blocks.shape)
    cols = np.broadcast_to(dofs[:, None, :], blocks.shape)
    return rows.ravel(), cols.ravel(), blocks.ravel()


def _to_csr(triplets, shape) -> sp.csr_matrix:
    rows, cols, data = (np.concatenate(part) for part in zip(*triplets))
    return sp.coo_matrix((data, (rows, cols)), shape=shape).tocsr()


def _volume_blocks(space: DGSpace, weights_per_cell: np.ndarray, kind: str, degree: int) -> np.ndarray:
    mesh = space.mesh
    subtess = mesh.subtessellation
    nb = space.n_local
    blocks = np.empty((mesh.n_cells, nb, nb))
    for c in range(mesh.n_cells):
        rule = cell_rule(mesh, subtess, c, degree)
        if kind == "stiffness":
            g = eval_grad(space, c, rule.points)
            blocks[c] = weights_per_cell[c] * np.einsum("m,mid,mjd->ij", rule.weights, g, g)
        else:
            v = eval_basis(space, c, rule.points)
            blocks[c] = v.T @ (rule.weights[:, None] * v)
    return 0.5 * (blocks + blocks.transpose(0, 2, 1))


def _face_traces(space: DGSpace, faces: FaceSet, select: np.ndarray, degree: int):
    points, weights = faces_rule(faces.endpoints[select], degree)
    normal = faces.normal[select]
    vp, gp = eval_batch(space, faces.plus_cell[select], points, grad=True)
    dnp = np.einsum("kmjd,kd->kmj", gp, normal)
    out = {"points": points, "weights": weights, "vp": vp, "dnp": dnp}
    minus = faces.minus_cell[select]
    if np.all(minus != BOUNDARY):
        vm, gm = eval_batch(space, minus, points, grad=True)
        out["vm"] = vm
        out["dnm"] = np.einsum("kmjd,kd->kmj", gm, normal)
    return out


def assemble_sipdg(space: DGSpace, rho: Union[DiffusionField, np.ndarray], C_sigma: float = DEFAULT_C_SIGMA, faces: Optional[FaceSet] = None) -> SparseSymMatrix:
    """
    Assemble the SIPDG operator in face form.

    Args:
        space (DGSpace): Space of degree ``p >= 1``.
        rho (DiffusionField or np.ndarray): Coefficient per cell.
        C_sigma (float): Penalty constant.
        faces (FaceSet, optional): Precomputed topology.

    Returns:
        SparseSymMatrix: The operator.
    """
    if space.degree < 1:
        raise AssemblyError("SIPDG assembly needs p >= 1")
    field = rho if isinstance(rho, DiffusionField) else DiffusionField(rho)
    faces = faces if faces is not None else space.mesh.faces
    p = space.degree
    pen = penalty_values(faces, field, p, C_sigma)
    n = space.n_dofs
    triplets = []

    vol = _volume_blocks(space, field.rho, "stiffness", 2 * p)
    triplets.append(_coo_blocks(space.cell_dofs(np.arange(space.mesh.n_cells)), vol))

    interior = np.flatnonzero(faces.is_interior)
    boundary = np.flatnonzero(faces.is_boundary)
    if len(interior):
        tr = _face_traces(space, faces, interior, 2 * p + 1)
        plus, minus = faces.plus_cell[interior], faces.minus_cell[interior]
        om = pen.omega[interior][:, None, None]
        J = np.concatenate([tr["vp"], -tr["vm"]], axis=2)
        D = np.concatenate(
            [om * field.rho[plus][:, None, None] * tr["dnp"], (1.0 - om) * field.rho[minus][:, None, None] * tr["dnm"]],
            axis=2,
        )
        dofs = np.concatenate([space.cell_dofs(plus), space.cell_dofs(minus)], axis=1)
        triplets.append(_coo_blocks(dofs, _face_matrices(J, D, tr["weights"], pen.sigma[interior])))
    if len(boundary):
        tr = _face_traces(space, faces, boundary, 2 * p + 1)
        plus = faces.plus_cell[boundary]
        D = field.rho[plus][:, None, None] * tr["dnp"]
        triplets.append(_coo_blocks(space.cell_dofs(plus), _face_matrices(tr["vp"], D, tr["weights"], pen.sigma[boundary])))

    A = _to_csr(triplets, (n, n))
    logger.info("assembled SIPDG operator: %d dofs, %d nonzeros", n, A.nnz)
    return SparseSymMatrix(A, space.n_local)


def _face_matrices(J: np.ndarray, D: np.ndarray, weights: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    consistency = np.einsum("kmi,km,kmj->kij", D, weights, J)
    penalty = np.einsum("kmi,km,kmj->kij", J, weights, J)
    return -(consistency + consistency.transpose(0, 2, 1)) + sigma[:, None, None] * penalty


def assemble_rhs(space: DGSpace, f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
    """
    Load vector ``(f, phi_i)`` with a degree ``2p + 2`` rule.

    Args:
        space (DGSpace): The space.
        f (Callable): Vectorised ``f(x, y)``.

    Returns:
        np.ndarray: Coefficient vector of length ``n_dofs``.
    """
    mesh = space.mesh
    subtess = mesh.subtessellation
    out = np.zeros(space.n_dofs)
    for c in range(mesh.n_cells):
        rule = cell_rule(mesh, subtess, c, 2 * space.degree + 2)
        fx = np.broadcast_to(np.asarray(f(rule.points[:, 0], rule.points[:, 1]), dtype=float), rule.weights.shape)
        out[space.dofs(c)] = eval_basis(space, c, rule.points).T @ (rule.weights * fx)
    return out


def assemble_mass(space: DGSpace) -> SparseSymMatrix:
    """Block diagonal L2 mass matrix (the identity for the orthonormal basis)."""
    blocks = _volume_blocks(space, None, "mass", 2 * space.degree)
    triplets = [_coo_blocks(space.cell_dofs(np.arange(space.mesh.n_cells)), blocks)]
    M = _to_csr(triplets, (space.n_dofs, space.n_dofs))
    return SparseSymMatrix(M, space.n_local)


def assemble_mixed_mass(fine_space: DGSpace, coarse_space: DGSpace, nesting: NestingMap) -> sp.csr_matrix:
    """
    Rectangular matrix ``G[i, J] = int phi_i psi_J`` between a fine and a coarse space.

    Args:
        fine_space (DGSpace): Space on the fine mesh.
        coarse_space (DGSpace): Space on the coarse mesh.
        nesting (NestingMap): Relation between the meshes.

    Returns:
        scipy.sparse.csr_matrix: ``(fine n_dofs, coarse n_dofs)``.

    Raises:
        AssemblyError: If a non-nested map carries no overlap data.
    """
    fine = fine_space.mesh
    degree = fine_space.degree + coarse_space.degree
    nf, nc = fine_space.n_local, coarse_space.n_local
    rows, cols, data = [], [], []

    def add(i, j, rule):
        phi = eval_basis(fine_space, i, rule.points)
        psi = eval_basis(coarse_space, j, rule.points)
        block = phi.T @ (rule.weights[:, None] * psi)
        rows.append(np.repeat(fine_space.dofs(i), nc))
        cols.append(np.tile(coarse_space.dofs(j), nf))
        data.append(block.ravel())

    if nesting.nested:
        if nesting.parent is None or len(nesting.parent) != fine.n_cells:
            raise AssemblyError("nested map does not cover the fine mesh")
        subtess = fine.subtessellation
        for i, j in enumerate(nesting.parent):
            add(i, int(j), cell_rule(fine, subtess, i, degree))
    else:
        if not nesting.overlaps:
            raise AssemblyError("non-nested map without overlap polygons")
        for i, j, poly in nesting.overlaps:
            add(i, j, triangles_rule(triangulate_convex(poly), degree))

    G = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(fine_space.n_dofs, coarse_space.n_dofs),
    ).tocsr()
    G.eliminate_zeros()
    return G


def assemble_lifting(
    space: DGSpace,
    rho: Union[str, DiffusionField, np.ndarray],
    jump_source: np.ndarray,
    faces: Optional[FaceSet] = None,
) -> np.ndarray:
    """
    Lift the jumps of ``jump_source`` into a discrete vector field.

    ``R`` solves ``int R . eta = -int_F [[v]] . {eta}_omega`` for all ``eta`` in the vector space.
    With ``rho="unit"`` the weight is ``omega = 1/2``; otherwise it comes from the coefficient.

    Args:
        space (DGSpace): The space.
        rho (str or DiffusionField or np.ndarray): ``"unit"`` or the coefficient per cell.
        jump_source (np.ndarray): Coefficient vector ``v``.
        faces (FaceSet, optional): Precomputed topology.

    Returns:
        np.ndarray: ``(n_dofs, 2)`` coefficients of both components.
    """
    faces = faces if faces is not None else space.mesh.faces
    if isinstance(rho, str):
        if rho != "unit":
            raise AssemblyError(f"unknown lifting variant {rho!r}")
        omega = np.where(faces.is_interior, 0.5, 1.0)
    else:
        omega = penalty_values(faces, rho, max(space.degree, 1)).omega
    out = np.zeros((space.n_dofs, 2))
    v = np.asarray(jump_source, dtype=float)
    for select in (np.flatnonzero(faces.is_interior), np.flatnonzero(faces.is_boundary)):
        if not len(select):
            continue
        tr = _face_traces(space, faces, select, 2 * space.degree + 1)
        plus = faces.plus_cell[select]
        jump = np.einsum("kmj,kj->km", tr["vp"], v[space.cell_dofs(plus)])
        if "vm" in tr:
            minus = faces.minus_cell[select]
            jump = jump - np.einsum("kmj,kj->km", tr["vm"], v[space.cell_dofs(minus)])
        normal = faces.normal[select]
        om = omega[select]
        # contributions -int jump n_d {phi}_omega for component d
        wj = tr["weights"] * jump
        plus_part = -np.einsum("km,kmj->kj", wj, tr["vp"]) * om[:, None]
        np.add.at(out, space.cell_dofs(plus), plus_part[:, :, None] * normal[:, None, :])
        if "vm" in tr:
            minus_part = -np.einsum("km,kmj->kj", wj, tr["vm"]) * (1.0 - om)[:, None]
            np.add.at(out, space.cell_dofs(minus), minus_part[:, :, None] * normal[:, None, :])
    return out


def _weighted_grad_dot(space: DGSpace, rho: np.ndarray, u: np.ndarray, field: np.ndarray) -> float:
    """``sum_k rho_k int grad u . F`` for a discrete vector field ``F`` with ``(n_dofs, 2)`` coefficients."""
    mesh = space.mesh
    subtess = mesh.subtessellation
    total = 0.0
    for c in range(mesh.n_cells):
        rule = cell_rule(mesh, subtess, c, 2 * space.degree)
        dofs = space.dofs(c)
        gu = np.einsum("mjd,j->md", eval_grad(space, c, rule.points), u[dofs])
        fv = eval_basis(space, c, rule.points) @ field[dofs]
        total += rho[c] * float(np.sum(rule.weights[:, None] * gu * fv))
    return total


def _jump_products(space: DGSpace, faces: FaceSet, sigma: np.ndarray, u: np.ndarray, v: np.ndarray) -> float:
    total = 0.0
    for select in (np.flatnonzero(faces.is_interior), np.flatnonzero(faces.is_boundary)):
        if not len(select):
            continue
        tr = _face_traces(space, faces, select, 2 * space.degree + 1)
        plus = space.cell_dofs(faces.plus_cell[select])
        ju = np.einsum("kmj,kj->km", tr["vp"], u[plus])
        jv = np.einsum("kmj,kj->km", tr["vp"], v[plus])
        if "vm" in tr:
            minus = space.cell_dofs(faces.minus_cell[select])
            ju = ju - np.einsum("kmj,kj->km", tr["vm"], u[minus])
            jv = jv - np.einsum("kmj,kj->km", tr["vm"], v[minus])
        total += float(np.sum(sigma[select][:, None] * tr["weights"] * ju * jv))
    return total


def lifting_form(space: DGSpace, rho: Union[DiffusionField, np.ndarray], u: np.ndarray, v: np.ndarray, C_sigma: float = DEFAULT_C_SIGMA) -> float:
    """
    Evaluate the operator on ``(u, v)`` through the lifting operator instead of face fluxes.

    Returns:
        float: ``int rho (grad u . grad v + grad u . R(v) + grad v . R(u)) + int_F sigma [[u]].[[v]]``.
    """
    field = rho if isinstance(rho, DiffusionField) else DiffusionField(rho)
    faces = space.mesh.faces
    pen = penalty_values(faces, field, space.degree, C_sigma)
    mesh = space.mesh
    subtess = mesh.subtessellation
    grad_term = 0.0
    for c in range(mesh.n_cells):
        rule = cell_rule(mesh, subtess, c, 2 * space.degree)
        g = eval_grad(space, c, rule.points)
        gu = np.einsum("mjd,j->md", g, u[space.dofs(c)])
        gv = np.einsum("mjd,j->md", g, v[space.dofs(c)])
        grad_term += field.rho[c] * float(np.sum(rule.weights[:, None] * gu * gv))
    Ru = assemble_lifting(space, field, u, faces)
    Rv = assemble_lifting(space, field, v, faces)
    lift = _weighted_grad_dot(space, field.rho, u, Rv) + _weighted_grad_dot(space, field.rho, v, Ru)
    return grad_term + lift + _jump_products(space, faces, pen.sigma, u, v)


def energy_matrix(space: DGSpace, rho: Union[DiffusionField, np.ndarray], C_sigma: float = DEFAULT_C_SIGMA) -> SparseSymMatrix:
    """Matrix ``E`` with ``v^T E v`` the squared DG energy norm."""
    field = rho if isinstance(rho, DiffusionField) else DiffusionField(rho)
    faces = space.mesh.faces
    p = space.degree
    pen = penalty_values(faces, field, max(p, 1), C_sigma)
    if p == 0:
        pen = PenaltyData(sigma=np.zeros_like(pen.sigma), omega=pen.omega, rho_avg=pen.rho_avg, h_avg=pen.h_avg)
    n = space.n_dofs
    triplets = []
    vol = _volume_blocks(space, field.rho, "stiffness", 2 * p)
    triplets.append(_coo_blocks(space.cell_dofs(np.arange(space.mesh.n_cells)), vol))
    for select in (np.flatnonzero(faces.is_interior), np.flatnonzero(faces.is_boundary)):
        if not len(select):
            continue
        tr = _face_traces(space, faces, select, 2 * p + 1)
        dofs = space.cell_dofs(faces.plus_cell[select])
        J = tr["vp"]
        if "vm" in tr:
            J = np.concatenate([tr["vp"], -tr["vm"]], axis=2)
            dofs = np.concatenate([dofs, space.cell_dofs(faces.minus_cell[select])], axis=1)
        blocks = pen.sigma[select][:, None, None] * np.einsum("kmi,km,kmj->kij", J, tr["weights"], J)
        triplets.append(_coo_blocks(dofs, blocks))
    E = _to_csr(triplets, (n, n))
    return SparseSymMatrix(E, space.n_local)


def energy_norm(space: DGSpace, rho: Union[DiffusionField, np.ndarray], C_sigma: float, v: np.ndarray) -> float:
    """
    DG energy norm ``(sum_k int rho |grad v|^2 + sum_F int sigma |[[v]]|^2)^(1/2)``.
    """
    E = energy_matrix(space, rho, C_sigma)
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(max(v @ (E @ v), 0.0)))


def l2_error(space: DGSpace, v: np.ndarray, exact: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
    """L2 distance between the discrete function ``v`` and ``exact(x, y)``."""
    mesh = space.mesh
    subtess = mesh.subtessellation
    degree = min(2 * space.degree + 4, 20)
    total = 0.0
    for c in range(mesh.n_cells):
        rule = cell_rule(mesh, subtess, c, degree)
        diff = eval_basis(space, c, rule.points) @ v[space.dofs(c)] - exact(rule.points[:, 0], rule.points[:, 1])
        total += float(rule.weights @ diff**2)
    return float(np.sqrt(total))
