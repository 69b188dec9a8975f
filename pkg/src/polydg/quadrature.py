"""
Quadrature Module
=================

Quadrature rules exact to a requested total polynomial degree on segments, triangles and, through
a sub-tessellation, on polygons.

Key Features
------------

- **simplex_rule**: collapsed Gauss product rule on the reference triangle ``(0,0), (1,0), (0,1)``
  (Gauss-Legendre in the first direction, Gauss-Jacobi with weight ``(1-t)`` in the second).
- **triangles_rule** / **cell_rule**: composite rules mapped to physical triangles.
- **face_rule**: Gauss-Legendre on a segment.

Reference rules are cached per degree and returned as read-only arrays.

"""
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from polydg.errors import QuadratureError

logger = logging.getLogger(__name__)

MAX_SIMPLEX_DEGREE = 20


@dataclass(frozen=True)
class QuadratureRule:
    """Points in physical space and positive weights summing to the measure of the region."""

    points: np.ndarray
    weights: np.ndarray
    params: Optional[np.ndarray] = None

    @property
    def n_points(self) -> int:
        return len(self.weights)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Contract ``values`` (leading axis over points) with the weights."""
        return np.tensordot(self.weights, values, axes=(0, 0))


def _n_points(degree: int) -> int:
    return max(1, math.ceil((degree + 1) / 2))


def _readonly(*arrays):
    for a in arrays:
        a.setflags(write=False)
    return arrays


@lru_cache(maxsize=None)
def segment_rule(degree: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gauss-Legendre rule on ``[0, 1]``.

    Args:
        degree (int): Polynomial degree to integrate exactly.

    Returns:
        Tuple[np.ndarray, np.ndarray]: Nodes and weights (weights sum to 1).
    """
    if degree < 0:
        raise QuadratureError(f"negative quadrature degree {degree}")
    t, w = roots_legendre(_n_points(degree))
    return _readonly(0.5 * (1.0 + t), 0.5 * w)


@lru_cache(maxsize=None)
def _simplex_arrays(degree: int) -> Tuple[np.ndarray, np.ndarray]:
    n = _n_points(degree)
    a, wa = roots_legendre(n)
    t, wb = roots_jacobi(n, 1.0, 0.0)
    a = 0.5 * (1.0 + a)
    wa = 0.5 * wa
    b = 0.5 * (1.0 + t)
    wb = 0.25 * wb
    aa, bb = np.meshgrid(a, b, indexing="ij")
    points = np.column_stack([(aa * (1.0 - bb)).ravel(), bb.ravel()])
    weights = np.outer(wa, wb).ravel()
    return _readonly(points, weights)


def simplex_rule(degree: int) -> QuadratureRule:
    """
    Rule on the reference triangle exact for total degree ``degree``.

    Args:
        degree (int): ``0 <= degree <= 20``.

    Returns:
        QuadratureRule: Weights summing to ``0.5``.

    Raises:
        QuadratureError: If the degree is out of range.
    """
    if not 0 <= degree <= MAX_SIMPLEX_DEGREE:
        raise QuadratureError(f"simplex rule degree {degree} outside [0, {MAX_SIMPLEX_DEGREE}]")
    points, weights = _simplex_arrays(degree)
    return QuadratureRule(points, weights)


def triangles_rule(triangles: np.ndarray, degree: int) -> QuadratureRule:
    """
    Composite rule over ``(k, 3, 2)`` counter-clockwise triangles.

    Args:
        triangles (np.ndarray): Triangle vertex coordinates.
        degree (int): Polynomial degree to integrate exactly.

    Returns:
        QuadratureRule: ``k * m`` points.
    """
    ref = simplex_rule(degree)
    a = triangles[:, 0]
    e1 = triangles[:, 1] - a
    e2 = triangles[:, 2] - a
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    pts = a[:, None, :] + ref.points[None, :, 0:1] * e1[:, None, :] + ref.points[None, :, 1:2] * e2[:, None, :]
    weights = np.abs(det)[:, None] * ref.weights[None, :]
    return QuadratureRule(pts.reshape(-1, 2), weights.ravel())


def cell_rule(mesh, subtess, cell: int, degree: int) -> QuadratureRule:
    """Composite rule over one polygonal cell through its sub-tessellation."""
    return triangles_rule(subtess.triangles[cell], degree)


def face_rule(endpoints: np.ndarray, degree: int) -> QuadratureRule:
    """
    Gauss-Legendre rule on a segment.

    Args:
        endpoints (np.ndarray): ``(2, 2)`` start and end point.
        degree (int): Polynomial degree to integrate exactly.

    Returns:
        QuadratureRule: Points on the segment, weights summing to its length, and the arclength
        parameter ``s in [0, 1]`` of every point in ``params``.
    """
    s, w = segment_rule(degree)
    start, end = endpoints[0], endpoints[1]
    length = float(np.hypot(*(end - start)))
    return QuadratureRule(start + s[:, None] * (end - start), length * w, params=s)


def faces_rule(endpoints: np.ndarray, degree: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Batched ``face_rule`` over ``(nf, 2, 2)`` segments.

    Returns:
        Tuple[np.ndarray, np.ndarray]: ``(nf, m, 2)`` points and ``(nf, m)`` weights.
    """
    s, w = segment_rule(degree)
    start = endpoints[:, 0]
    delta = endpoints[:, 1] - start
    length = np.hypot(delta[:, 0], delta[:, 1])
    points = start[:, None, :] + s[None, :, None] * delta[:, None, :]
    return points, length[:, None] * w[None, :]
