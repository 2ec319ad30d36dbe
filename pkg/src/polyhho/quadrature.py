"""Quadrature rules on the reference triangle and the unit segment.

The reference triangle is (0,0), (1,0), (0,1) with measure 1/2; rule weights
integrate over it directly.  Low degrees use classical symmetric rules; any
higher degree falls back to a collapsed Gauss-Legendre product rule, which
stays exact and keeps all weights positive.
"""

import functools

import numpy as np

__all__ = ["QuadRule", "triangle_quadrature", "segment_quadrature",
           "map_to_triangle", "map_to_segment"]


class QuadRule:
    def __init__(self, points, weights, degree):
        self.points = np.asarray(points, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.degree = degree

    def __len__(self):
        return len(self.weights)


def _tri_table(degree):
    if degree <= 1:
        return np.array([[1 / 3, 1 / 3]]), np.array([0.5])
    if degree == 2:
        p = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        return p, np.full(3, 1 / 6)
    if degree <= 5:
        s = np.sqrt(15.0)
        a1, a2 = (6 + s) / 21, (6 - s) / 21
        w1, w2 = (155 + s) / 2400, (155 - s) / 2400
        p = np.array([
            [1 / 3, 1 / 3],
            [a1, a1], [1 - 2 * a1, a1], [a1, 1 - 2 * a1],
            [a2, a2], [1 - 2 * a2, a2], [a2, 1 - 2 * a2],
        ])
        w = np.array([9 / 80, w1, w1, w1, w2, w2, w2])
        return p, w
    return None


def _duffy(degree):
    # x = u, y = v(1-u); the jacobian (1-u) raises the u-degree by one
    n = (degree + 3) // 2
    g, gw = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (g + 1.0)
    wu = 0.5 * gw
    U, V = np.meshgrid(u, u, indexing="ij")
    WU, WV = np.meshgrid(wu, wu, indexing="ij")
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    w = (WU * WV * (1.0 - U)).ravel()
    return np.column_stack([x, y]), w


@functools.lru_cache(maxsize=None)
def triangle_quadrature(degree):
    """Rule exact for polynomials of total degree <= degree on the
    reference triangle.

    Rules are cached per degree and shared; callers must not mutate the
    returned points/weights.
    """
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    tab = _tri_table(degree)
    if tab is not None:
        return QuadRule(tab[0], tab[1], max(degree, 1))
    p, w = _duffy(degree)
    return QuadRule(p, w, degree)


@functools.lru_cache(maxsize=None)
def segment_quadrature(degree):
    """Gauss-Legendre rule on [0, 1] exact for degree <= degree.

    Rules are cached per degree and shared; callers must not mutate the
    returned points/weights.
    """
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    n = degree // 2 + 1
    g, gw = np.polynomial.legendre.leggauss(n)
    return QuadRule(0.5 * (g + 1.0), 0.5 * gw, 2 * n - 1)


def map_to_triangle(rule, p0, p1, p2):
    """Push a reference rule to the physical triangle (p0, p1, p2)."""
    p0, p1, p2 = map(np.asarray, (p0, p1, p2))
    e1, e2 = p1 - p0, p2 - p0
    det = e1[0] * e2[1] - e1[1] * e2[0]
    if det <= 0:
        raise ValueError("triangle is degenerate or negatively oriented")
    pts = p0 + np.outer(rule.points[:, 0], e1) + np.outer(rule.points[:, 1], e2)
    return pts, rule.weights * det


def map_to_segment(rule, p0, p1):
    p0, p1 = np.asarray(p0), np.asarray(p1)
    pts = p0 + np.outer(rule.points, p1 - p0)
    return pts, rule.weights * np.hypot(*(p1 - p0))
