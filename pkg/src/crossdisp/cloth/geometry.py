"""Planar polygon predicates and frame helpers."""

from __future__ import annotations

import numpy as np


def euler_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation ``Rz(yaw) @ Ry(pitch) @ Rx(roll)`` (fixed-axis XYZ)."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp_ = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp_], [0, 1, 0], [-sp_, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return rz @ ry @ rx


def plane_basis(normal) -> np.ndarray:
    """Two orthonormal in-plane axes (rows) for the plane with ``normal``.

    For ``normal = z`` this is exactly the xy-plane basis.
    """
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    if np.allclose(n, [0.0, 0.0, 1.0]):
        return np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    e1 = np.cross([0.0, 0.0, 1.0], n) if abs(n[2]) < 0.9 else np.cross([1.0, 0.0, 0.0], n)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return np.stack([e1, e2])


def project(points, normal=(0.0, 0.0, 1.0)) -> np.ndarray:
    return np.asarray(points, dtype=float) @ plane_basis(normal).T


def _on_segment(p, a, b, tol=1e-12) -> bool:
    cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
    if abs(cross) > tol * max(1.0, np.hypot(b[0] - a[0], b[1] - a[1])):
        return False
    return min(a[0], b[0]) - tol <= p[0] <= max(a[0], b[0]) + tol and min(a[1], b[1]) - tol <= p[1] <= max(a[1], b[1]) + tol


def point_in_polygon(point, polygon) -> bool:
    """Even-odd ray casting; points on an edge count as inside."""
    poly = np.asarray(polygon, dtype=float)
    if len(poly) < 3:
        raise ValueError("polygon needs at least 3 vertices")
    px, py = float(point[0]), float(point[1])
    inside = False
    n = len(poly)
    for k in range(n):
        a, b = poly[k], poly[(k + 1) % n]
        if _on_segment((px, py), a, b):
            return True
        if (a[1] > py) != (b[1] > py):
            x_cross = a[0] + (py - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            if px < x_cross:
                inside = not inside
    return inside


def winding_number(point, polygon) -> int:
    """Signed crossing count of the closed polygon around ``point``."""
    poly = np.asarray(polygon, dtype=float)
    px, py = float(point[0]), float(point[1])
    wn = 0
    n = len(poly)
    for k in range(n):
        a, b = poly[k], poly[(k + 1) % n]
        is_left = (b[0] - a[0]) * (py - a[1]) - (px - a[0]) * (b[1] - a[1])
        if a[1] <= py < b[1] and is_left > 0:
            wn += 1
        elif b[1] <= py < a[1] and is_left < 0:
            wn -= 1
    return wn
