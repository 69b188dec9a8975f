"""
Basis Module
============

Physical frame polynomial spaces of total degree ``p`` on polygonal cells.

Every cell gets the products ``P_a(xi) P_b(eta)`` (``a + b <= p``) of Legendre polynomials in
coordinates scaled to the cell bounding box, orthonormalised in L2 over the cell by two passes of
Cholesky factorisation of the Gram matrix. The local mass matrix is then the identity.

Degrees of freedom are numbered cell by cell: cell ``c`` owns ``c * n_local ... (c+1) * n_local - 1``.

"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import legder, legvander
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from polydg.errors import AssemblyError
from polydg.mesh import PolytopicMesh
from polydg.quadrature import cell_rule

logger = logging.getLogger(__name__)


def exponents(p: int) -> np.ndarray:
    """Pairs ``(a, b)`` with ``a + b <= p``, ordered by total degree."""
    return np.array([(t - b, b) for t in range(p + 1) for b in range(t + 1)], dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class DGSpace:
    """
    Discontinuous piecewise polynomial space on a mesh.

    ``coeffs[c]`` maps the scaled Legendre products of cell ``c`` to its orthonormal basis:
    ``phi = P @ coeffs[c]``.
    """

    mesh: PolytopicMesh
    degree: int
    center: np.ndarray
    half_width: np.ndarray
    coeffs: np.ndarray
    exps: np.ndarray = field(repr=False)

    @property
    def n_local(self) -> int:
        return len(self.exps)

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_cells * self.n_local

    def dof_offset(self, cell: int) -> int:
        return cell * self.n_local

    def dofs(self, cell: int) -> np.ndarray:
        return cell * self.n_local + np.arange(self.n_local)

    def cell_dofs(self, cells: np.ndarray) -> np.ndarray:
        """``(len(cells), n_local)`` dof indices."""
        return np.asarray(cells)[:, None] * self.n_local + np.arange(self.n_local)[None, :]


def _prebasis(degree: int, exps: np.ndarray, xi: np.ndarray, eta: np.ndarray, grad: bool = False):
    vx = legvander(xi, degree)
    vy = legvander(eta, degree)
    values = vx[..., exps[:, 0]] * vy[..., exps[:, 1]]
    if not grad:
        return values
    if degree == 0:
        zero = np.zeros_like(values)
        return values, zero, zero
    deriv = legder(np.eye(degree + 1), axis=0)
    dx = legvander(xi, degree - 1) @ deriv
    dy = legvander(eta, degree - 1) @ deriv
    return values, dx[..., exps[:, 0]] * vy[..., exps[:, 1]], vx[..., exps[:, 0]] * dy[..., exps[:, 1]]


def _local_coords(space_center, space_half, pts):
    scaled = (pts - space_center) / space_half
    return scaled[..., 0], scaled[..., 1]


def build_space(mesh: PolytopicMesh, p: int) -> DGSpace:
    """
    Build the orthonormal DG space of degree ``p``.

    Args:
        mesh (PolytopicMesh): The mesh.
        p (int): Polynomial degree, ``p >= 0``.

    Returns:
        DGSpace: The space with ``n_cells * (p+1)(p+2)/2`` dofs.

    Raises:
        AssemblyError: If a Gram matrix cannot be factorised.
    """
    if p < 0:
        raise AssemblyError(f"polynomial degree must be nonnegative, got {p}")
    exps = exponents(p)
    nb = len(exps)
    bbox = mesh.cell_bbox
    center = 0.5 * (bbox[:, :2] + bbox[:, 2:])
    half = 0.5 * (bbox[:, 2:] - bbox[:, :2])
    coeffs = np.empty((mesh.n_cells, nb, nb))
    subtess = mesh.subtessellation
    for c in range(mesh.n_cells):
        rule = cell_rule(mesh, subtess, c, 2 * p)
        xi, eta = _local_coords(center[c], half[c], rule.points)
        values = _prebasis(p, exps, xi, eta)
        C = np.eye(nb)
        # second pass removes the round-off left by the first
        for _ in range(2):
            phi = values @ C
            gram = phi.T @ (rule.weights[:, None] * phi)
            try:
                L = cholesky(gram, lower=True)
            except LinAlgError as err:
                raise AssemblyError(f"Gram matrix of cell {c} is not positive definite") from err
            C = solve_triangular(L, C.T, lower=True).T
        coeffs[c] = C
    logger.debug("built degree %d space on %d cells (%d dofs)", p, mesh.n_cells, mesh.n_cells * nb)
    return DGSpace(mesh=mesh, degree=p, center=center, half_width=half, coeffs=coeffs, exps=exps)


def eval_basis(space: DGSpace, cell: int, points: np.ndarray) -> np.ndarray:
    """
    Basis values of one cell.

    Args:
        space (DGSpace): The space.
        cell (int): Cell index.
        points (np.ndarray): ``(m, 2)`` points.

    Returns:
        np.ndarray: ``(m, n_local)`` values.
    """
    xi, eta = _local_coords(space.center[cell], space.half_width[cell], np.asarray(points, dtype=float))
    return _prebasis(space.degree, space.exps, xi, eta) @ space.coeffs[cell]


def eval_grad(space: DGSpace, cell: int, points: np.ndarray) -> np.ndarray:
    """
    Basis gradients of one cell.

    Returns:
        np.ndarray: ``(m, n_local, 2)`` gradients.
    """
    xi, eta = _local_coords(space.center[cell], space.half_width[cell], np.asarray(points, dtype=float))
    _, dxi, deta = _prebasis(space.degree, space.exps, xi, eta, grad=True)
    C = space.coeffs[cell]
    hx, hy = space.half_width[cell]
    return np.stack([(dxi @ C) / hx, (deta @ C) / hy], axis=-1)


def eval_batch(space: DGSpace, cells: np.ndarray, points: np.ndarray, grad: bool = False):
    """
    Basis values (and gradients) for many cells at once.

    Args:
        space (DGSpace): The space.
        cells (np.ndarray): ``(k,)`` cell indices.
        points (np.ndarray): ``(k, m, 2)`` points, row ``i`` evaluated on ``cells[i]``.
        grad (bool): Also return ``(k, m, n_local, 2)`` gradients.

    Returns:
        np.ndarray or tuple: ``(k, m, n_local)`` values, and the gradients if requested.
    """
    center = space.center[cells][:, None, :]
    half = space.half_width[cells][:, None, :]
    xi, eta = _local_coords(center, half, points)
    C = space.coeffs[cells]
    if not grad:
        return np.einsum("kmj,kjl->kml", _prebasis(space.degree, space.exps, xi, eta), C)
    values, dxi, deta = _prebasis(space.degree, space.exps, xi, eta, grad=True)
    values = np.einsum("kmj,kjl->kml", values, C)
    gx = np.einsum("kmj,kjl->kml", dxi, C) / half[..., 0:1]
    gy = np.einsum("kmj,kjl->kml", deta, C) / half[..., 1:2]
    return values, np.stack([gx, gy], axis=-1)


def evaluate(space: DGSpace, v: np.ndarray, cell: int, points: np.ndarray) -> np.ndarray:
    """Value of the coefficient vector ``v`` at points of ``cell``."""
    return eval_basis(space, cell, points) @ v[space.dofs(cell)]


def evaluate_grad(space: DGSpace, v: np.ndarray, cell: int, points: np.ndarray) -> np.ndarray:
    """``(m, 2)`` gradient of ``v`` at points of ``cell``."""
    return np.einsum("mjd,j->md", eval_grad(space, cell, points), v[space.dofs(cell)])


def l2_project(
    space: DGSpace,
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    degree: Optional[int] = None,
    cells: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    L2 projection of ``f(x, y)`` onto the space.

    Args:
        space (DGSpace): Target space.
        f (Callable): Vectorised scalar field.
        degree (int, optional): Quadrature degree, ``2p + 2`` by default.
        cells (Sequence[int], optional): Restrict to these cells (other entries stay 0).

    Returns:
        np.ndarray: Coefficient vector.
    """
    degree = 2 * space.degree + 2 if degree is None else degree
    out = np.zeros(space.n_dofs)
    mesh = space.mesh
    subtess = mesh.subtessellation
    for c in range(mesh.n_cells) if cells is None else cells:
        rule = cell_rule(mesh, subtess, c, degree)
        values = np.asarray(f(rule.points[:, 0], rule.points[:, 1]), dtype=float)
        out[space.dofs(c)] = eval_basis(space, c, rule.points).T @ (rule.weights * values)
    return out
