"""
Schwarz Module
==============

Two-level non-overlapping additive Schwarz preconditioner for the SIPDG operator.

The preconditioner is ``z = Q A_0^{-1} Q^T r + sum_i R_i^T A_i^{-1} R_i r`` where

- ``R_i`` gathers the dofs of subdomain ``i`` of a partition of the fine cells and ``A_i`` is the
  matching principal submatrix of ``A``;
- ``Q`` is the L2 prolongation from the coarse space (the fine/coarse mixed mass matrix, since the
  fine basis is orthonormal) and ``A_0 = Q^T A Q``.

Both solves are exact (Cholesky). Small local blocks are inverted explicitly and applied in groups
of equal size.

"""
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.sparse.linalg import splu

from polydg.assembly import SparseSymMatrix, assemble_mixed_mass
from polydg.basis import DGSpace
from polydg.errors import SchwarzError
from polydg.mesh import NestingMap, Partition

logger = logging.getLogger(__name__)

DENSE_COARSE_LIMIT = 6000
EXPLICIT_INVERSE_LIMIT = 200


@dataclass(frozen=True)
class BoundInputs:
    """Mesh and coefficient quantities entering the condition number bound."""

    p: int
    q: int
    h: float
    H: float
    H_sub: float
    N_S: int
    rho_ratio: float = 1.0
    nested: bool = True

    def __post_init__(self):
        if self.q > self.p:
            raise SchwarzError(f"coarse degree q={self.q} exceeds fine degree p={self.p}")


def theoretical_bound(inputs: BoundInputs) -> float:
    """
    Bracketed factor of the condition number bound (hidden constant omitted).

    Nested: ``ratio (p^2 H / (q h) + p^2 H^2 / (q^2 h H_sub)) (N_S + 1)``.
    Non-nested: ``p^4 H^2 / (q^2 h^2) (N_S + 1)``.
    """
    p, q, h, H = inputs.p, max(inputs.q, 1), inputs.h, inputs.H
    if inputs.nested:
        factor = p**2 * H / (q * h) + p**2 * H**2 / (q**2 * h * inputs.H_sub)
        return float(inputs.rho_ratio * factor * (inputs.N_S + 1))
    return float(p**4 * H**2 / (q**2 * h**2) * (inputs.N_S + 1))


class CoarseSolver:
    """Exact solver for ``A_0 = Q^T A Q``: dense Cholesky or sparse LU for large coarse spaces."""

    def __init__(self, A0: sp.spmatrix, dense_limit: int = DENSE_COARSE_LIMIT):
        self.matrix = A0
        self.n = A0.shape[0]
        self.dense = self.n <= dense_limit
        if self.dense:
            try:
                self._factor = cho_factor(A0.toarray(), lower=True)
            except LinAlgError as err:
                raise SchwarzError("indefinite coarse operator: Cholesky factorization failed") from err
        else:
            self._factor = splu(A0.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0)
            if np.any(self._factor.U.diagonal() <= 0.0):
                raise SchwarzError("indefinite coarse operator: nonpositive pivot")

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.dense:
            return cho_solve(self._factor, b)
        return self._factor.solve(b)


@dataclass
class LocalSolvers:
    """Factorised subdomain blocks. ``dofs[i]`` are the fine dofs of subdomain ``i``."""

    dofs: Tuple[np.ndarray, ...]
    groups: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    factored: List[Tuple[np.ndarray, tuple]] = field(default_factory=list)

    def solve(self, r: np.ndarray) -> np.ndarray:
        z = np.zeros_like(r)
        for idx, inverses in self.groups:
            z[idx] = np.einsum("kij,kj->ki", inverses, r[idx])
        for idx, factor in self.factored:
            z[idx] = cho_solve(factor, r[idx])
        return z

    @property
    def block_sizes(self) -> np.ndarray:
        return np.array([len(d) for d in self.dofs])


def build_prolongation(fine_space: DGSpace, coarse_space: DGSpace, nesting: NestingMap, check_rank: bool = True) -> sp.csr_matrix:
    """
    Matrix of the L2 prolongation from the coarse to the fine space.

    With an orthonormal fine basis the fine mass matrix is the identity and ``Q`` equals the mixed
    mass matrix ``G``.

    Args:
        fine_space (DGSpace): Fine space.
        coarse_space (DGSpace): Coarse space, degree ``q <= p``.
        nesting (NestingMap): Relation between the meshes.
        check_rank (bool): Verify full column rank.

    Returns:
        scipy.sparse.csr_matrix: ``Q`` of shape ``(fine n_dofs, coarse n_dofs)``.

    Raises:
        SchwarzError: If ``Q`` is rank deficient.
    """
    Q = assemble_mixed_mass(fine_space, coarse_space, nesting)
    if check_rank:
        QtQ = (Q.T @ Q).tocsc()
        n0 = QtQ.shape[0]
        try:
            if n0 <= DENSE_COARSE_LIMIT:
                cho_factor(QtQ.toarray())
            else:
                lu = splu(QtQ, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0)
                pivots = lu.U.diagonal()
                if np.any(pivots <= 1e-12 * np.abs(pivots).max()):
                    raise LinAlgError("small pivot")
        except LinAlgError as err:
            raise SchwarzError("prolongation is rank deficient; overlap data is incomplete") from err
    logger.debug("prolongation %dx%d, %d nonzeros", Q.shape[0], Q.shape[1], Q.nnz)
    return Q


def build_coarse_operator(A, Q: sp.spmatrix, dense_limit: int = DENSE_COARSE_LIMIT) -> CoarseSolver:
    """
    Galerkin coarse operator ``A_0 = Q^T A Q``, factorised.

    Raises:
        SchwarzError: If ``A_0`` is not positive definite.
    """
    A = A.matrix if isinstance(A, SparseSymMatrix) else sp.csr_matrix(A)
    A0 = (Q.T @ A @ Q).tocsr()
    A0 = (0.5 * (A0 + A0.T)).tocsr()
    solver = CoarseSolver(A0, dense_limit)
    logger.info("coarse operator: %d dofs (%s factorization)", solver.n, "dense" if solver.dense else "sparse")
    return solver


def build_local_solvers(A, partition: Partition, fine_space: DGSpace, inverse_limit: int = EXPLICIT_INVERSE_LIMIT) -> LocalSolvers:
    """
    Factorise the principal submatrices of ``A`` on every subdomain.

    Args:
        A: Fine operator.
        partition (Partition): Subdomain partition of the fine cells.
        fine_space (DGSpace): Fine space (dof numbering).
        inverse_limit (int): Blocks up to this size are inverted explicitly.

    Returns:
        LocalSolvers: The factorised blocks.

    Raises:
        SchwarzError: If a block is not positive definite.
    """
    A = A.matrix if isinstance(A, SparseSymMatrix) else sp.csr_matrix(A)
    dofs = tuple(fine_space.cell_dofs(cells).ravel() for cells in partition.members)
    solvers = LocalSolvers(dofs=dofs)
    by_size: Dict[int, List[Tuple[np.ndarray, np.ndarray]]] = {}
    for i, idx in enumerate(dofs):
        block = A[idx][:, idx].toarray()
        try:
            factor = cho_factor(0.5 * (block + block.T), lower=True)
        except LinAlgError as err:
            raise SchwarzError(f"local block {i} is not positive definite") from err
        if len(idx) <= inverse_limit:
            inv = cho_solve(factor, np.eye(len(idx)))
            by_size.setdefault(len(idx), []).append((idx, 0.5 * (inv + inv.T)))
        else:
            solvers.factored.append((idx, factor))
    for size in sorted(by_size):
        entries = by_size[size]
        solvers.groups.append((np.stack([e[0] for e in entries]), np.stack([e[1] for e in entries])))
    logger.info("local solvers: %d subdomains, block sizes %d..%d", len(dofs), min(map(len, dofs)), max(map(len, dofs)))
    return solvers


@dataclass
class SchwarzSetup:
    """Everything needed to apply the two-level preconditioner."""

    partition: Partition
    local: Optional[LocalSolvers]
    Q: Optional[sp.csr_matrix]
    coarse: Optional[CoarseSolver]
    n: int
    use_coarse: bool = True
    use_local: bool = True

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return apply_preconditioner(self, r)

    def summary(self) -> dict:
        """JSON serialisable statistics."""
        sizes = self.local.block_sizes if self.local is not None else np.array([0])
        return {
            "n_dofs": int(self.n),
            "n_subdomains": int(self.partition.n_parts),
            "block_size_min": int(sizes.min()),
            "block_size_max": int(sizes.max()),
            "coarse_dofs": int(self.coarse.n) if self.coarse is not None else 0,
            "coarse_dense": bool(self.coarse.dense) if self.coarse is not None else None,
            "use_coarse": self.use_coarse,
            "use_local": self.use_local,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def build_schwarz(
    A,
    fine_space: DGSpace,
    partition: Partition,
    coarse_space: Optional[DGSpace] = None,
    nesting: Optional[NestingMap] = None,
    use_coarse: bool = True,
    use_local: bool = True,
) -> SchwarzSetup:
    """
    Build the two-level additive Schwarz preconditioner.

    Args:
        A: Fine SIPDG operator.
        fine_space (DGSpace): Fine space.
        partition (Partition): Local solver partition (the fine mesh itself in the massively
            parallel case).
        coarse_space (DGSpace, optional): Coarse space; required when ``use_coarse``.
        nesting (NestingMap, optional): Fine/coarse relation; required when ``use_coarse``.
        use_coarse (bool): Include the coarse correction.
        use_local (bool): Include the local solves.

    Returns:
        SchwarzSetup: The preconditioner.
    """
    if not (use_coarse or use_local):
        raise SchwarzError("preconditioner needs the coarse or the local part")
    n = A.shape[0]
    if n != fine_space.n_dofs:
        raise SchwarzError(f"operator has {n} rows, space has {fine_space.n_dofs} dofs")
    local = build_local_solvers(A, partition, fine_space) if use_local else None
    Q = coarse = None
    if use_coarse:
        if coarse_space is None or nesting is None:
            raise SchwarzError("coarse correction needs a coarse space and a nesting map")
        Q = build_prolongation(fine_space, coarse_space, nesting)
        coarse = build_coarse_operator(A, Q)
    return SchwarzSetup(partition=partition, local=local, Q=Q, coarse=coarse, n=n, use_coarse=use_coarse, use_local=use_local)


def apply_preconditioner(setup: SchwarzSetup, r: np.ndarray) -> np.ndarray:
    """
    Apply the additive Schwarz preconditioner.

    Args:
        setup (SchwarzSetup): The preconditioner.
        r (np.ndarray): Residual.

    Returns:
        np.ndarray: ``z``, linear and symmetric in ``r``.

    Raises:
        SchwarzError: On a dimension mismatch.
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (setup.n,):
        raise SchwarzError(f"residual has shape {r.shape}, preconditioner expects ({setup.n},)")
    z = np.zeros(setup.n)
    if setup.use_local:
        z += setup.local.solve(r)
    if setup.use_coarse:
        z += setup.Q @ setup.coarse.solve(setup.Q.T @ r)
    return z
