"""Scaled orthonormal polynomial bases on cells, simplices and faces.

Monomials are centred at the support's centroid and scaled by its diameter,
then L2-orthonormalized through a Cholesky factorization of the Gram matrix
computed with exact quadrature.  With orthonormal bases every mass matrix is
the identity, so L2 projections reduce to moment evaluations and the basis
coefficient of a broken polynomial doubles as its L2 norm contribution.
"""

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .quadrature import (triangle_quadrature, segment_quadrature,
                         map_to_triangle, map_to_segment)

__all__ = ["monomial_exponents", "TriGeometry", "CellGeometry", "FaceGeometry",
           "ScaledBasis2D", "FaceBasis", "KoszulBasis", "l2_project",
           "poly_dim"]


def poly_dim(degree):
    """dim P^degree in two variables (0 for degree < 0)."""
    if degree < 0:
        return 0
    return (degree + 1) * (degree + 2) // 2


def monomial_exponents(degree):
    """Exponent pairs of the 2-variable monomials up to total degree,
    graded ordering with x-power descending inside each degree block."""
    out = []
    for d in range(degree + 1):
        for i in range(d, -1, -1):
            out.append((i, d - i))
    return np.array(out, dtype=int) if out else np.zeros((0, 2), dtype=int)


class TriGeometry:
    """A single physical triangle."""

    def __init__(self, pts):
        self.pts = np.asarray(pts, dtype=float)
        e1, e2 = self.pts[1] - self.pts[0], self.pts[2] - self.pts[0]
        self.area = 0.5 * (e1[0] * e2[1] - e1[1] * e2[0])
        self.centroid = self.pts.mean(axis=0)
        d2 = np.sum((self.pts[:, None] - self.pts[None, :]) ** 2, axis=2)
        self.diameter = np.sqrt(d2.max())

    def quad(self, degree):
        rule = triangle_quadrature(degree)
        return map_to_triangle(rule, *self.pts)


class CellGeometry:
    """A polygonal cell given by its fan subtriangulation; quadrature is the
    sum of mapped triangle rules over the fan."""

    def __init__(self, pts, simplices, centroid=None, diameter=None):
        self.pts = np.asarray(pts, dtype=float)
        self.tris = [TriGeometry(t) for t in simplices]
        self.area = sum(t.area for t in self.tris)
        if centroid is None:
            centroid = sum(t.area * t.centroid for t in self.tris) / self.area
        self.centroid = np.asarray(centroid, dtype=float)
        if diameter is None:
            d2 = np.sum((self.pts[:, None] - self.pts[None, :]) ** 2, axis=2)
            diameter = np.sqrt(d2.max())
        self.diameter = float(diameter)

    def quad(self, degree):
        parts = [t.quad(degree) for t in self.tris]
        return (np.vstack([p for p, _ in parts]),
                np.concatenate([w for _, w in parts]))


class FaceGeometry:
    """A straight mesh face (segment)."""

    def __init__(self, p0, p1):
        self.p0, self.p1 = np.asarray(p0, float), np.asarray(p1, float)
        self.midpoint = 0.5 * (self.p0 + self.p1)
        d = self.p1 - self.p0
        self.length = float(np.hypot(*d))
        self.tangent = d / self.length
        self.normal = np.array([self.tangent[1], -self.tangent[0]])

    def quad(self, degree):
        return map_to_segment(segment_quadrature(degree), self.p0, self.p1)

    def param(self, pts):
        """Affine coordinate in [-1, 1] along the face."""
        return ((np.asarray(pts) - self.midpoint) @ self.tangent) \
            / (0.5 * self.length)


class ScaledBasis2D:
    """L2-orthonormal basis of P^degree on a 2D support (cell or simplex).

    The first function is the normalized constant, so the zeroth coefficient
    of any projection is its scaled mean and all later basis functions have
    zero mean over the support.
    """

    def __init__(self, geom, degree):
        self.geom = geom
        self.degree = degree
        self.exps = monomial_exponents(degree)
        self.dim = len(self.exps)
        pts, w = geom.quad(2 * degree)
        V = self._monomials(pts)
        G = (V * w[:, None]).T @ V
        try:
            L = cholesky(G, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"Gram matrix not SPD (degree {degree}): {exc}")
        # rows of C express the orthonormal functions in monomials; a second
        # pass on the near-identity refined Gram restores orthonormality
        # lost to round-off when the raw Gram is ill-conditioned
        C = solve_triangular(L, np.eye(self.dim), lower=True)
        C = solve_triangular(cholesky(C @ G @ C.T, lower=True), C,
                             lower=True)
        self.coeff = C
        # conditioning of the basis actually used downstream
        self.gram_cond = float(np.linalg.cond(self.coeff @ G @ self.coeff.T))

    def _scale(self, pts):
        return (np.asarray(pts, float) - self.geom.centroid) \
            / self.geom.diameter

    def _monomials(self, pts):
        s = self._scale(pts)
        return s[:, 0:1] ** self.exps[:, 0] * s[:, 1:2] ** self.exps[:, 1]

    def eval(self, pts):
        """(npts, dim) values of the orthonormal basis."""
        return self._monomials(pts) @ self.coeff.T

    def grad(self, pts):
        """(npts, 2, dim) gradients of the orthonormal basis."""
        s = self._scale(pts)
        n = len(s)
        ex, ey = self.exps[:, 0], self.exps[:, 1]
        gx = np.zeros((n, self.dim))
        gy = np.zeros((n, self.dim))
        mx = ex > 0
        my = ey > 0
        if mx.any():
            gx[:, mx] = (ex[mx] * s[:, 0:1] ** (ex[mx] - 1)
                         * s[:, 1:2] ** ey[mx]) / self.geom.diameter
        if my.any():
            gy[:, my] = (ey[my] * s[:, 1:2] ** (ey[my] - 1)
                         * s[:, 0:1] ** ex[my]) / self.geom.diameter
        return np.stack([gx @ self.coeff.T, gy @ self.coeff.T], axis=1)


class FaceBasis:
    """L2-orthonormal basis of P^degree on a face, in the affine coordinate."""

    def __init__(self, face, degree):
        self.face = face
        self.degree = degree
        self.dim = degree + 1
        pts, w = face.quad(2 * degree)
        V = self._monomials(pts)
        G = (V * w[:, None]).T @ V
        L = cholesky(G, lower=True)
        C = solve_triangular(L, np.eye(self.dim), lower=True)
        self.coeff = solve_triangular(cholesky(C @ G @ C.T, lower=True), C,
                                      lower=True)

    def _monomials(self, pts):
        t = self.face.param(pts)
        return t[:, None] ** np.arange(self.dim)

    def eval(self, pts):
        return self._monomials(pts) @ self.coeff.T


class KoszulBasis:
    """Basis of the Koszul complement (x - x_T)^perp P^{degree-1}(T): the
    vector fields r(x) m(x) with r = rot90(x - x_T)/h and m a scaled monomial.

    Together with gradients of P^{degree+1} these span P^degree(T)^2.
    Empty for degree <= 0.
    """

    def __init__(self, center, h, degree):
        self.center = np.asarray(center, dtype=float)
        self.h = float(h)
        self.degree = degree
        self.exps = monomial_exponents(degree - 1) if degree >= 1 \
            else np.zeros((0, 2), dtype=int)
        self.dim = len(self.exps)

    def eval(self, pts):
        """(npts, 2, dim) values of the generator fields."""
        pts = np.asarray(pts, dtype=float)
        n = len(pts)
        if self.dim == 0:
            return np.zeros((n, 2, 0))
        s = (pts - self.center) / self.h
        mono = s[:, 0:1] ** self.exps[:, 0] * s[:, 1:2] ** self.exps[:, 1]
        r = np.stack([-s[:, 1], s[:, 0]], axis=1)
        return r[:, :, None] * mono[:, None, :]


def l2_project(f, basis, quad_degree=None):
    """Coefficients of the L2 projection of f onto an orthonormal basis.

    f maps (npts, 2) points to (npts,) scalar values.  quad_degree defaults
    to 2*degree + 8, which oversamples smooth non-polynomial data enough to
    keep the residual orthogonality below 1e-11 relative.
    """
    if quad_degree is None:
        quad_degree = 2 * basis.degree + 8
    if isinstance(basis, FaceBasis):
        pts, w = basis.face.quad(quad_degree)
    else:
        pts, w = basis.geom.quad(quad_degree)
    vals = np.asarray(f(pts), dtype=float)
    return basis.eval(pts).T @ (w * vals)
