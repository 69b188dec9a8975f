"""
Krylov Module
=============

Preconditioned conjugate gradients with condition number estimation from the CG recurrence.

Key Features
------------

- **pcg**: PCG from a zero initial guess; stops on the Euclidean relative residual
  ``||b - A x|| / ||b||``. Every ``alpha``/``beta`` is recorded.
- **lanczos_condition_estimate**: builds the Lanczos tridiagonal matrix implied by the CG
  coefficients and returns its extreme eigenvalues (bisection, LAPACK ``stebz``).
- **dense_condition**: exact condition number of the preconditioned operator for small problems.

"""
import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cholesky, eigh, eigvalsh_tridiagonal

from polydg.errors import KrylovError

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
ESTIMATE_TOL = 1e-14
DENSE_CONDITION_LIMIT = 2000

Operator = Callable[[np.ndarray], np.ndarray]


def default_maxit(n: int) -> int:
    return int(20 * math.sqrt(n)) + 200


@dataclass
class PCGReport:
    """Outcome of one PCG run."""

    x: np.ndarray
    iterations: int
    residual_history: List[float] = field(default_factory=list)
    alphas: List[float] = field(default_factory=list)
    betas: List[float] = field(default_factory=list)
    converged: bool = True
    lambda_min: float = 1.0
    lambda_max: float = 1.0
    cond_estimate: float = 1.0

    def to_csv(self, path: str):
        """Write the residual history as ``iter,relres``."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "relres"])
            for k, res in enumerate(self.residual_history, start=1):
                writer.writerow([k, repr(float(res))])

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "relres": self.residual_history[-1] if self.residual_history else 0.0,
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "K": self.cond_estimate,
        }


def _as_operator(op) -> Operator:
    if op is None:
        return lambda v: v
    if callable(op):
        return op
    return lambda v: op @ v


def pcg(
    applyA,
    applyM,
    b: np.ndarray,
    tol: float = DEFAULT_TOL,
    maxit: Optional[int] = None,
    strict: bool = False,
) -> PCGReport:
    """
    Solve ``A x = b`` by preconditioned conjugate gradients.

    Args:
        applyA: SPD operator (callable or matrix).
        applyM: Preconditioner ``r -> M^{-1} r`` (callable, matrix or None for the identity).
        b (np.ndarray): Right hand side.
        tol (float): Relative residual tolerance.
        maxit (int, optional): Iteration limit, ``20 sqrt(n) + 200`` by default.
        strict (bool): Raise instead of flagging when ``maxit`` is exhausted.

    Returns:
        PCGReport: Solution, history, recurrence coefficients and condition estimate.

    Raises:
        KrylovError: On a non-finite or nonpositive curvature (indefinite operator or
            preconditioner), or on non-convergence in strict mode.
    """
    A = _as_operator(applyA)
    M = _as_operator(applyM)
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise KrylovError("right hand side is not finite")
    n = len(b)
    maxit = default_maxit(n) if maxit is None else maxit
    x = np.zeros(n)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return PCGReport(x=x, iterations=0)

    r = b.copy()
    z = M(r)
    d = z.copy()
    rz = float(r @ z)
    if not math.isfinite(rz) or rz <= 0.0:
        raise KrylovError(f"preconditioned residual has nonpositive norm {rz!r}; preconditioner is not SPD")
    report = PCGReport(x=x, iterations=0, converged=False)
    for k in range(1, maxit + 1):
        Ad = A(d)
        dAd = float(d @ Ad)
        if not math.isfinite(dAd) or dAd <= 0.0:
            raise KrylovError(f"nonpositive curvature {dAd!r} at iteration {k}; operator is not SPD")
        alpha = rz / dAd
        x += alpha * d
        r -= alpha * Ad
        report.alphas.append(alpha)
        relres = float(np.linalg.norm(r)) / bnorm
        report.residual_history.append(relres)
        report.iterations = k
        if relres <= tol:
            report.converged = True
            break
        z = M(r)
        rz_new = float(r @ z)
        if not math.isfinite(rz_new) or rz_new <= 0.0:
            raise KrylovError(f"preconditioned residual has nonpositive norm {rz_new!r}; preconditioner is not SPD")
        beta = rz_new / rz
        report.betas.append(beta)
        d = z + beta * d
        rz = rz_new

    if not report.converged:
        msg = f"PCG did not reach tol={tol:g} in {maxit} iterations (relres {report.residual_history[-1]:.3e})"
        if strict:
            raise KrylovError(msg)
        logger.warning(msg)
    report.x = x
    lmin, lmax, K = lanczos_condition_estimate(report.alphas, report.betas)
    report.lambda_min, report.lambda_max, report.cond_estimate = lmin, lmax, K
    logger.debug("PCG: %d iterations, relres %.3e, K=%.4g", report.iterations, report.residual_history[-1], K)
    return report


def lanczos_matrix(alphas, betas) -> Tuple[np.ndarray, np.ndarray]:
    """Diagonal and off-diagonal of the Lanczos tridiagonal matrix of a CG run."""
    alphas = np.asarray(alphas, dtype=float)
    k = len(alphas)
    betas = np.asarray(betas, dtype=float)[: k - 1]
    if k == 0:
        raise KrylovError("no CG steps recorded")
    if np.any(~np.isfinite(alphas)) or np.any(alphas <= 0.0):
        raise KrylovError("nonpositive CG step length; operator is indefinite")
    if np.any(betas < 0.0):
        raise KrylovError("negative CG beta")
    diag = 1.0 / alphas
    diag[1:] += betas / alphas[:-1]
    off = np.sqrt(betas) / alphas[:-1]
    return diag, off


def lanczos_condition_estimate(alphas, betas) -> Tuple[float, float, float]:
    """
    Extreme eigenvalues of the Lanczos matrix built from CG coefficients.

    Args:
        alphas: ``k >= 1`` step lengths.
        betas: At least ``k - 1`` direction update coefficients.

    Returns:
        Tuple[float, float, float]: ``(lambda_min, lambda_max, lambda_max / lambda_min)``.

    Raises:
        KrylovError: On a nonpositive step length.
    """
    diag, off = lanczos_matrix(alphas, betas)
    k = len(diag)
    if k == 1:
        lmin = lmax = float(diag[0])
    else:
        lmin = float(eigvalsh_tridiagonal(diag, off, select="i", select_range=(0, 0), lapack_driver="stebz")[0])
        lmax = float(eigvalsh_tridiagonal(diag, off, select="i", select_range=(k - 1, k - 1), lapack_driver="stebz")[0])
    if lmin <= 0.0:
        raise KrylovError(f"Lanczos matrix has nonpositive eigenvalue {lmin!r}")
    return lmin, lmax, lmax / lmin


def operator_to_dense(apply: Operator, n: int) -> np.ndarray:
    """Dense matrix of a linear operator, column by column."""
    out = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        out[:, j] = apply(e)
        e[j] = 0.0
    return out


def _dense(m) -> np.ndarray:
    return m.toarray() if sp.issparse(m) else np.asarray(m, dtype=float)


def dense_condition(A, M=None, inverse: bool = False) -> float:
    """
    Exact condition number of ``M^{-1} A`` from a dense symmetric generalized eigensolve.

    Args:
        A: SPD matrix (dense or sparse), ``n <= 2000``.
        M: SPD preconditioner matrix; the identity when None.
        inverse (bool): ``M`` already holds ``M^{-1}`` (e.g. an assembled preconditioner).

    Returns:
        float: ``lambda_max / lambda_min``.

    Raises:
        KrylovError: If an operator is indefinite or larger than ``DENSE_CONDITION_LIMIT``.
    """
    n = A.shape[0]
    if n > DENSE_CONDITION_LIMIT:
        raise KrylovError(f"dense condition number is limited to n <= {DENSE_CONDITION_LIMIT}, got n={n}")
    A = _dense(A)
    A = 0.5 * (A + A.T)
    try:
        if M is None:
            eigs = eigh(A, eigvals_only=True)
        elif inverse:
            Minv = _dense(M)
            L = cholesky(0.5 * (Minv + Minv.T), lower=True)
            S = L.T @ A @ L
            eigs = eigh(0.5 * (S + S.T), eigvals_only=True)
        else:
            Md = _dense(M)
            eigs = eigh(A, 0.5 * (Md + Md.T), eigvals_only=True)
    except LinAlgError as err:
        raise KrylovError("dense condition number: operator is not positive definite") from err
    if eigs[0] <= 0.0:
        raise KrylovError(f"dense condition number: nonpositive eigenvalue {eigs[0]!r}")
    return float(eigs[-1] / eigs[0])
