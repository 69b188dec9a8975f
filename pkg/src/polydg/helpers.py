"""
Helpers Module
==============

This module provides utility functions shared by the mesh, assembly and harness layers. They cover
planar polygon geometry, deterministic seed derivation and printing data in a tabular format.

Functions
---------

- **derive_seed**:
  Derives a reproducible 32-bit seed for a named random stream from a base seed.

- **polygon_area**, **polygon_centroid**, **polygon_diameter**:
  Shoelace area (signed), area centroid and maximum pairwise vertex distance.

- **is_convex**:
  Checks convexity of a counter-clockwise polygon, tolerating collinear vertices.

- **clip_halfplane**:
  One Sutherland-Hodgman step: keeps the part of a polygon with ``normal . x <= offset``.

- **points_in_polygon**:
  Even-odd containment test with a distance slack on the boundary.

- **print_table**:
  Pretty prints a list of dictionaries as a table.

"""
import hashlib
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import pdist


def derive_seed(key: Union[bytes, str], seed: int = 0) -> int:
    """
    Derive a seed for a named random stream.

    Args:
        key (Union[bytes, str]): Name of the stream, e.g. ``"example4/coarse/64"``.
        seed (int): Base seed given on the command line.

    Returns:
        int: The first 8 hex characters of the SHA1 of ``"<seed>:<key>"`` as an integer.
    """
    _key = key
    if isinstance(_key, bytes):
        _key = _key.decode("utf-8")
    key_hash = hashlib.sha1(f"{seed}:{_key}".encode("utf-8")).hexdigest()
    return int(key_hash[:8], 16)


def polygon_area(pts: np.ndarray) -> float:
    """
    Signed shoelace area; positive for counter-clockwise loops.

    Args:
        pts (np.ndarray): ``(k, 2)`` vertex coordinates.

    Returns:
        float: Signed area.
    """
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(pts: np.ndarray) -> np.ndarray:
    """
    Area centroid of a simple polygon.

    Args:
        pts (np.ndarray): ``(k, 2)`` vertex coordinates.

    Returns:
        np.ndarray: The centroid. Falls back to the vertex mean for degenerate polygons.
    """
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if abs(area) < 1e-300:
        return pts.mean(axis=0)
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return np.array([cx, cy])


def polygon_diameter(pts: np.ndarray) -> float:
    """
    Maximum pairwise vertex distance.

    Args:
        pts (np.ndarray): ``(k, 2)`` vertex coordinates.

    Returns:
        float: The diameter, ``0.0`` for a single point.
    """
    if len(pts) < 2:
        return 0.0
    return float(pdist(pts).max())


def is_convex(pts: np.ndarray, rtol: float = 1e-10) -> bool:
    """
    Check convexity of a counter-clockwise polygon.

    Collinear vertices are accepted, so agglomerates of grid squares still count as convex.

    Args:
        pts (np.ndarray): ``(k, 2)`` vertex coordinates.
        rtol (float): Tolerance relative to the squared polygon extent.

    Returns:
        bool: True if every turn is a left turn or straight.
    """
    d = np.roll(pts, -1, axis=0) - pts
    cross = d[:, 0] * np.roll(d[:, 1], -1) - d[:, 1] * np.roll(d[:, 0], -1)
    scale = float(np.ptp(pts, axis=0).max()) ** 2
    return bool(np.all(cross >= -rtol * scale))


def clip_halfplane(pts: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    """
    Keep the part of a polygon lying in ``{x : normal . x <= offset}``.

    Args:
        pts (np.ndarray): ``(k, 2)`` vertex coordinates (any orientation is preserved).
        normal (np.ndarray): Half-plane normal.
        offset (float): Half-plane offset.

    Returns:
        np.ndarray: The clipped polygon, possibly with zero rows.
    """
    if len(pts) == 0:
        return pts
    dist = pts @ normal - offset
    inside = dist <= 0.0
    if inside.all():
        return pts
    if not inside.any():
        return pts[:0]
    out = []
    k = len(pts)
    for i in range(k):
        j = (i + 1) % k
        if inside[i]:
            out.append(pts[i])
        if inside[i] != inside[j]:
            t = dist[i] / (dist[i] - dist[j])
            out.append(pts[i] + t * (pts[j] - pts[i]))
    return np.asarray(out)


def points_in_polygon(poly: np.ndarray, pts: np.ndarray, slack: float = 0.0) -> np.ndarray:
    """
    Even-odd containment test, treating points within ``slack`` of the boundary as inside.

    Args:
        poly (np.ndarray): ``(k, 2)`` polygon vertices.
        pts (np.ndarray): ``(m, 2)`` query points.
        slack (float): Absolute distance tolerance to the polygon boundary.

    Returns:
        np.ndarray: ``(m,)`` boolean mask.
    """
    pts = np.atleast_2d(pts)
    a = poly
    b = np.roll(poly, -1, axis=0)
    px = pts[:, 0][:, None]
    py = pts[:, 1][:, None]
    ax, ay, bx, by = a[:, 0][None], a[:, 1][None], b[:, 0][None], b[:, 1][None]
    straddle = (ay > py) != (by > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = ax + (py - ay) * (bx - ax) / (by - ay)
    crossings = np.logical_and(straddle, px < xcross).sum(axis=1)
    inside = crossings % 2 == 1
    if slack > 0.0:
        ex, ey = bx - ax, by - ay
        len2 = ex * ex + ey * ey
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(len2 > 0, ((px - ax) * ex + (py - ay) * ey) / len2, 0.0)
        t = np.clip(t, 0.0, 1.0)
        dx = px - (ax + t * ex)
        dy = py - (ay + t * ey)
        near = (dx * dx + dy * dy).min(axis=1) <= slack * slack
        inside = np.logical_or(inside, near)
    return inside


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return "{:.4g}".format(value)
    return str(value)


def print_table(dict_arr: Sequence[dict], col_list: Optional[Sequence[str]] = None):
    """
    Pretty print a list of dictionaries as a table.

    Args:
        dict_arr (list): A list of dictionaries to print, rows keep their order.
        col_list (list, optional): A list of column names to include. Defaults to None.

    Returns:
        None
    """
    if not col_list:
        col_list = list(dict_arr[0].keys() if dict_arr else [])
    _list = [tuple(col_list)]  # 1st row = header
    for item in dict_arr:
        if item is not None:
            _list.append(tuple(_format_cell(item.get(col)) for col in col_list))
    # Maximum size of the col for each element
    col_sz = [max(map(len, col)) for col in zip(*_list)]
    format_str = " | ".join(["{{:<{}}}".format(i) for i in col_sz])
    format_sep = "-+-".join(["{{:<{}}}".format(i) for i in col_sz])
    separator = format_sep.format(*["-" * i for i in col_sz])
    print(separator)
    print(format_str.format(*_list[0]))
    print(separator)
    for item in _list[1:]:
        print(format_str.format(*item))
    print(separator)
